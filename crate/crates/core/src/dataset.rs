//! Binary factual-consistency datasets: loading, validation, seeded splits,
//! and export in the canonical line-oriented or CSV layout.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling;

/// Binary factual-consistency label. Serialized as the integer 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Inconsistent,
    Consistent,
}

impl Label {
    pub fn from_bool(consistent: bool) -> Self {
        if consistent {
            Label::Consistent
        } else {
            Label::Inconsistent
        }
    }

    pub fn is_consistent(self) -> bool {
        self == Label::Consistent
    }

    pub fn flipped(self) -> Self {
        Label::from_bool(!self.is_consistent())
    }

    pub fn as_u8(self) -> u8 {
        self.is_consistent() as u8
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.as_u8()
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Inconsistent),
            1 => Ok(Label::Consistent),
            other => Err(format!("label {other} is not 0 or 1")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// One grounding / generated-text pair with its original label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub dataset: String,
    pub grounding: String,
    pub generated_text: String,
    #[serde(rename = "label")]
    pub original_label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<BTreeMap<String, String>>,
}

impl Example {
    pub fn new(
        id: impl Into<String>,
        dataset: impl Into<String>,
        grounding: impl Into<String>,
        generated_text: impl Into<String>,
        original_label: Label,
    ) -> Self {
        Example {
            id: id.into(),
            dataset: dataset.into(),
            grounding: grounding.into(),
            generated_text: generated_text.into(),
            original_label,
            metadata: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::MissingField {
                id: String::new(),
                field: "id",
            });
        }
        if self.grounding.is_empty() {
            return Err(Error::MissingField {
                id: self.id.clone(),
                field: "grounding",
            });
        }
        if self.generated_text.is_empty() {
            return Err(Error::MissingField {
                id: self.id.clone(),
                field: "generated_text",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    name: String,
    examples: Vec<Example>,
    population_size: Option<u64>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        examples: Vec<Example>,
        population_size: Option<u64>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(examples.len());
        for e in &examples {
            e.validate()?;
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        check_population(population_size, examples.len())?;
        Ok(Dataset {
            name: name.into(),
            examples,
            population_size,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<Example> {
        self.examples
    }

    /// Size `N` of the full dataset this sample was drawn from, if known.
    pub fn population_size(&self) -> Option<u64> {
        self.population_size
    }

    pub fn with_population_size(mut self, n: u64) -> Result<Self> {
        check_population(Some(n), self.examples.len())?;
        self.population_size = Some(n);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Example> {
        self.examples.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|e| e.id.as_str())
    }

    pub fn labels(&self) -> Vec<Label> {
        self.examples.iter().map(|e| e.original_label).collect()
    }

    /// `id -> original label`.
    pub fn label_map(&self) -> HashMap<String, Label> {
        self.examples
            .iter()
            .map(|e| (e.id.clone(), e.original_label))
            .collect()
    }

    /// Same name and population, new example list. Invariants are re-checked.
    pub fn derive(&self, examples: Vec<Example>) -> Result<Self> {
        Dataset::new(self.name.clone(), examples, self.population_size)
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Example;
    type IntoIter = std::slice::Iter<'a, Example>;

    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}

fn check_population(population: Option<u64>, n: usize) -> Result<()> {
    match population {
        Some(0) => Err(Error::invalid("population_size must be positive")),
        Some(p) if (p as usize) < n => Err(Error::invalid(format!(
            "population_size {p} is smaller than the {n} examples present"
        ))),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    /// `.csv` means CSV; anything else is treated as JSON lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

pub const CSV_HEADER: [&str; 6] = [
    "id",
    "dataset",
    "grounding",
    "generated_text",
    "label",
    "metadata",
];

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    dataset: Option<String>,
    grounding: Option<String>,
    generated_text: Option<String>,
    label: Option<i64>,
    #[serde(default)]
    metadata: Option<BTreeMap<String, String>>,
}

impl RawRecord {
    fn into_example(self, default_dataset: &str) -> Result<Example> {
        let id = self.id.unwrap_or_default();
        if id.is_empty() {
            return Err(Error::MissingField { id, field: "id" });
        }
        let grounding = self.grounding.ok_or_else(|| Error::MissingField {
            id: id.clone(),
            field: "grounding",
        })?;
        let generated_text = self.generated_text.ok_or_else(|| Error::MissingField {
            id: id.clone(),
            field: "generated_text",
        })?;
        let label = self.label.ok_or_else(|| Error::MissingField {
            id: id.clone(),
            field: "label",
        })?;
        let original_label = match label {
            0 => Label::Inconsistent,
            1 => Label::Consistent,
            other => return Err(Error::LabelDomain { id, label: other }),
        };
        let e = Example {
            dataset: self
                .dataset
                .filter(|d| !d.is_empty())
                .unwrap_or_else(|| default_dataset.to_string()),
            id,
            grounding,
            generated_text,
            original_label,
            metadata: self.metadata,
        };
        e.validate()?;
        Ok(e)
    }
}

/// Load a dataset. The dataset name is the file stem; `population_size` is
/// left unset and can be attached with [`Dataset::with_population_size`].
pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset> {
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let file = File::open(path)?;
    let records = match format {
        Format::Jsonl => read_jsonl(path, file, &name)?,
        Format::Csv => read_csv(path, file, &name)?,
    };
    Dataset::new(name, records, None)
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_jsonl(path: &Path, file: File, name: &str) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| parse_error(path, i + 1, e.to_string()))?;
        let e = raw.into_example(name)?;
        if !seen.insert(e.id.clone()) {
            return Err(Error::DuplicateId(e.id));
        }
        out.push(e);
    }
    Ok(out)
}

fn read_csv(path: &Path, file: File, name: &str) -> Result<Vec<Example>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(parse_error(
            path,
            1,
            format!("expected header {}", CSV_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| rec.get(i).map(str::to_string);
        let label = match rec.get(4).map(str::trim) {
            None | Some("") => None,
            Some(s) => Some(
                s.parse::<i64>()
                    .map_err(|_| parse_error(path, line, format!("label {s:?} is not an integer")))?,
            ),
        };
        let metadata = match rec.get(5) {
            None | Some("") => None,
            Some(s) => Some(
                serde_json::from_str(s)
                    .map_err(|e| parse_error(path, line, format!("metadata: {e}")))?,
            ),
        };
        let raw = RawRecord {
            id: field(0),
            dataset: field(1),
            grounding: field(2).filter(|s| !s.is_empty()),
            generated_text: field(3).filter(|s| !s.is_empty()),
            label,
            metadata,
        };
        out.push(raw.into_example(name)?);
    }
    Ok(out)
}

/// Write `d` in canonical field order: id, dataset, grounding, generated_text,
/// label, metadata.
pub fn export_dataset(d: &Dataset, path: &Path, format: Format) -> Result<()> {
    let file = File::create(path)?;
    match format {
        Format::Jsonl => {
            let mut w = BufWriter::new(file);
            for e in d {
                serde_json::to_writer(&mut w, e)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(file);
            w.write_record(CSV_HEADER)?;
            for e in d {
                let metadata = match &e.metadata {
                    Some(m) => serde_json::to_string(m)?,
                    None => String::new(),
                };
                let label = e.original_label.as_u8().to_string();
                w.write_record([
                    e.id.as_str(),
                    e.dataset.as_str(),
                    e.grounding.as_str(),
                    e.generated_text.as_str(),
                    label.as_str(),
                    metadata.as_str(),
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Sample `test_count` examples uniformly without replacement (see
/// [`sampling`] for the exact procedure). Both halves keep the input order
/// and inherit the population size.
pub fn split_dataset(d: &Dataset, test_count: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if test_count > d.len() {
        return Err(Error::invalid(format!(
            "test_count {test_count} exceeds dataset size {}",
            d.len()
        )));
    }
    let mut rng = sampling::rng(seed);
    let picked: HashSet<usize> = sampling::sample_indices(&mut rng, d.len(), test_count)
        .into_iter()
        .collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, e) in d.examples.iter().enumerate() {
        if picked.contains(&i) {
            test.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    Ok((d.derive(train)?, d.derive(test)?))
}

/// Seeded 75% train / 25% validation split for downstream fine-tuning runs.
pub fn train_validation_split(d: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    let val = (d.len() as f64 * 0.25).round() as usize;
    split_dataset(d, val, seed)
}

pub fn positive_rate(d: &Dataset) -> Result<f64> {
    if d.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let pos = d.iter().filter(|e| e.original_label.is_consistent()).count();
    Ok(pos as f64 / d.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    fn labelled(labels: &[u8]) -> Dataset {
        let ex = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| Example::new(format!("e{i}"), "t", "g", "h", Label::try_from(l).unwrap()))
            .collect();
        Dataset::new("t", ex, None).unwrap()
    }

    #[test]
    fn loads_two_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            "{\"id\":\"a\",\"grounding\":\"x\",\"generated_text\":\"y\",\"label\":1}\n\
             {\"id\":\"b\",\"grounding\":\"x\",\"generated_text\":\"z\",\"label\":0}\n",
        );
        let d = load_dataset(&p, Format::Jsonl).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.examples()[0].id, "a");
        assert_eq!(d.examples()[0].original_label, Label::Consistent);
        assert_eq!(d.examples()[1].dataset, "d");
    }

    #[test]
    fn duplicate_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let row = "{\"id\":\"a\",\"grounding\":\"x\",\"generated_text\":\"y\",\"label\":1}\n";
        let p = write(&dir, "d.jsonl", &format!("{row}{row}"));
        match load_dataset(&p, Format::Jsonl) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "a"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn label_two_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            "{\"id\":\"a\",\"grounding\":\"x\",\"generated_text\":\"y\",\"label\":2}\n",
        );
        assert!(matches!(
            load_dataset(&p, Format::Jsonl),
            Err(Error::LabelDomain { label: 2, .. })
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            "{\"id\":\"a\",\"grounding\":\"x\",\"generated_text\":\"y\",\"label\":1}\n{oops\n",
        );
        assert!(matches!(
            load_dataset(&p, Format::Jsonl),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn missing_grounding_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            "{\"id\":\"a\",\"generated_text\":\"y\",\"label\":1}\n",
        );
        assert!(matches!(
            load_dataset(&p, Format::Jsonl),
            Err(Error::MissingField { field: "grounding", .. })
        ));
    }

    #[test]
    fn csv_requires_fixed_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "id,label\na,1\n");
        assert!(matches!(load_dataset(&p, Format::Csv), Err(Error::Parse { .. })));
    }

    #[test]
    fn split_counts_and_boundary() {
        let d = labelled(&[0; 1000]);
        let (train, test) = split_dataset(&d, 160, 1).unwrap();
        assert_eq!((train.len(), test.len()), (840, 160));

        let (train, test) = split_dataset(&d, 1000, 1).unwrap();
        assert!(train.is_empty());
        assert_eq!(test.len(), 1000);

        assert!(split_dataset(&d, 1001, 1).is_err());
    }

    #[test]
    fn split_is_deterministic() {
        let d = labelled(&[1; 300]);
        assert_eq!(split_dataset(&d, 40, 9).unwrap(), split_dataset(&d, 40, 9).unwrap());
        assert_ne!(split_dataset(&d, 40, 9).unwrap().1, split_dataset(&d, 40, 10).unwrap().1);
    }

    #[test]
    fn positive_rate_counts() {
        assert_eq!(positive_rate(&labelled(&[1, 1, 1])).unwrap(), 1.0);
        assert_eq!(positive_rate(&labelled(&[1, 0, 0, 0])).unwrap(), 0.25);
        assert!(matches!(positive_rate(&labelled(&[])), Err(Error::Empty(_))));
    }

    #[test]
    fn population_must_cover_sample() {
        let d = labelled(&[1, 0, 1]);
        assert!(d.clone().with_population_size(2).is_err());
        assert_eq!(d.with_population_size(10).unwrap().population_size(), Some(10));
    }

    #[test]
    fn train_validation_is_three_to_one() {
        let (tr, va) = train_validation_split(&labelled(&[0; 840]), 5).unwrap();
        assert_eq!((tr.len(), va.len()), (630, 210));
    }
}
