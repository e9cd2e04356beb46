//! Two-modal labeled documents: file ingestion (JSONL and csv-pair), a
//! seeded synthetic generator, fold planning for cross-validation, and
//! optional per-coordinate standardization.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{random_orthonormal, Matrix};

/// One labeled two-modal document. `class` is the dense class index in
/// `0..num_classes`, assigned by the owning [`Dataset`] in sorted order of
/// the class ids found in the source data.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub image: Vec<f64>,
    pub text: Vec<f64>,
    pub class: usize,
}

/// An ordered collection of documents sharing feature dimensions and a
/// class id universe. Immutable after construction and safe to share
/// across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    documents: Vec<Document>,
    d_image: usize,
    d_text: usize,
    /// Sorted original class ids; a document's dense `class` indexes here.
    class_ids: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset from documents carrying raw class ids. Ids are
    /// remapped to dense indices in sorted-id order; vector lengths and
    /// finiteness are validated per record.
    pub fn from_documents(mut documents: Vec<Document>) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let d_image = documents[0].image.len();
        let d_text = documents[0].text.len();
        if d_image == 0 || d_text == 0 {
            return Err(Error::InvalidArgument(
                "documents need at least one feature per modality".into(),
            ));
        }
        for (index, doc) in documents.iter().enumerate() {
            if doc.image.len() != d_image {
                return Err(Error::Record {
                    index,
                    message: format!(
                        "image vector has length {}, expected {d_image}",
                        doc.image.len()
                    ),
                });
            }
            if doc.text.len() != d_text {
                return Err(Error::Record {
                    index,
                    message: format!(
                        "text vector has length {}, expected {d_text}",
                        doc.text.len()
                    ),
                });
            }
            if let Some(pos) = doc.image.iter().position(|v| !v.is_finite()) {
                return Err(Error::Record {
                    index,
                    message: format!("non-finite image value at position {pos}"),
                });
            }
            if let Some(pos) = doc.text.iter().position(|v| !v.is_finite()) {
                return Err(Error::Record {
                    index,
                    message: format!("non-finite text value at position {pos}"),
                });
            }
        }
        let mut class_ids: Vec<usize> = documents.iter().map(|d| d.class).collect();
        class_ids.sort_unstable();
        class_ids.dedup();
        for doc in &mut documents {
            doc.class = class_ids
                .binary_search(&doc.class)
                .expect("class id collected above");
        }
        Ok(Self {
            documents,
            d_image,
            d_text,
            class_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn d_image(&self) -> usize {
        self.d_image
    }

    pub fn d_text(&self) -> usize {
        self.d_text
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    /// Original class id for a dense class index.
    pub fn original_class_id(&self, class: usize) -> usize {
        self.class_ids[class]
    }

    /// Documents at the given indices as a new dataset. Feature dimensions
    /// and the class id universe are preserved even if a class is absent
    /// from the selection, so train and test splits agree on the label
    /// encoding.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let documents = indices.iter().map(|&i| self.documents[i].clone()).collect();
        Ok(Self {
            documents,
            d_image: self.d_image,
            d_text: self.d_text,
            class_ids: self.class_ids.clone(),
        })
    }

    /// Errors if any class has no document here; used to vet training
    /// splits before learning.
    pub fn check_class_coverage(&self) -> Result<()> {
        let mut seen = vec![false; self.num_classes()];
        for doc in &self.documents {
            seen[doc.class] = true;
        }
        match seen.iter().position(|&s| !s) {
            Some(class) => Err(Error::MissingClass {
                class: self.class_ids[class],
            }),
            None => Ok(()),
        }
    }

    /// Image features stacked as rows: n × d_image.
    pub fn images_matrix(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.len() * self.d_image);
        for doc in &self.documents {
            data.extend_from_slice(&doc.image);
        }
        Matrix::from_vec_unchecked(self.len(), self.d_image, data)
    }

    /// Text features stacked as rows: n × d_text.
    pub fn texts_matrix(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.len() * self.d_text);
        for doc in &self.documents {
            data.extend_from_slice(&doc.text);
        }
        Matrix::from_vec_unchecked(self.len(), self.d_text, data)
    }

    /// Sign labels stacked as rows: n × m with +1 at the document's class
    /// and −1 elsewhere (one-of-m encoding).
    pub fn label_matrix(&self) -> Matrix {
        let m = self.num_classes();
        let mut data = vec![-1.0; self.len() * m];
        for (i, doc) in self.documents.iter().enumerate() {
            data[i * m + doc.class] = 1.0;
        }
        Matrix::from_vec_unchecked(self.len(), m, data)
    }
}

/// On-disk dataset layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    /// One JSON record per line: `{"image": [...], "text": [...], "class": n}`.
    Jsonl,
    /// Two row-aligned CSVs, `<stem>.image.csv` (leading `class` column) and
    /// `<stem>.text.csv`.
    CsvPair,
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "jsonl" => Ok(DatasetFormat::Jsonl),
            "csv-pair" => Ok(DatasetFormat::CsvPair),
            other => Err(format!(
                "unknown dataset format {other:?} (expected jsonl or csv-pair)"
            )),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    image: Vec<f64>,
    text: Vec<f64>,
    class: usize,
}

#[derive(Serialize)]
struct JsonRecordOut<'a> {
    image: &'a [f64],
    text: &'a [f64],
    class: usize,
}

/// Reads a dataset file in the chosen format. For `CsvPair` the path may be
/// the common stem or either member file.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    match format {
        DatasetFormat::Jsonl => load_jsonl(path),
        DatasetFormat::CsvPair => load_csv_pair(path),
    }
}

/// Writes a dataset in the chosen format, using original class ids.
pub fn save_dataset(dataset: &Dataset, path: &Path, format: DatasetFormat) -> Result<()> {
    match format {
        DatasetFormat::Jsonl => save_jsonl(dataset, path),
        DatasetFormat::CsvPair => save_csv_pair(dataset, path),
    }
}

fn load_jsonl(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut documents = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let index = documents.len();
        let record: JsonRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
            index,
            message: format!("invalid JSON record: {e}"),
        })?;
        documents.push(Document {
            image: record.image,
            text: record.text,
            class: record.class,
        });
    }
    Dataset::from_documents(documents)
}

fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for doc in dataset.documents() {
        let record = JsonRecordOut {
            image: &doc.image,
            text: &doc.text,
            class: dataset.original_class_id(doc.class),
        };
        let line = serde_json::to_string(&record).expect("plain finite floats always encode");
        writeln!(writer, "{line}").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Resolves the two member files of a csv-pair from a stem or either member.
fn csv_pair_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let stem = s
        .strip_suffix(".image.csv")
        .or_else(|| s.strip_suffix(".text.csv"))
        .unwrap_or(&s);
    (
        PathBuf::from(format!("{stem}.image.csv")),
        PathBuf::from(format!("{stem}.text.csv")),
    )
}

fn load_csv_pair(path: &Path) -> Result<Dataset> {
    let (image_path, text_path) = csv_pair_paths(path);
    let mut image_reader = csv::Reader::from_path(&image_path)
        .map_err(|e| Error::parse(&image_path, e.to_string()))?;
    let headers = image_reader
        .headers()
        .map_err(|e| Error::parse(&image_path, e.to_string()))?;
    if headers.get(0) != Some("class") {
        return Err(Error::parse(
            &image_path,
            "first column must be named \"class\"",
        ));
    }
    let mut classes = Vec::new();
    let mut images = Vec::new();
    for (index, record) in image_reader.records().enumerate() {
        let record = record.map_err(|e| Error::Record {
            index,
            message: e.to_string(),
        })?;
        let class = record
            .get(0)
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::Record {
                index,
                message: format!(
                    "class column does not parse as an integer: {:?}",
                    record.get(0)
                ),
            })?;
        classes.push(class);
        images.push(parse_float_fields(&record, 1, index)?);
    }

    let mut text_reader =
        csv::Reader::from_path(&text_path).map_err(|e| Error::parse(&text_path, e.to_string()))?;
    let mut texts = Vec::new();
    for (index, record) in text_reader.records().enumerate() {
        let record = record.map_err(|e| Error::Record {
            index,
            message: e.to_string(),
        })?;
        texts.push(parse_float_fields(&record, 0, index)?);
    }

    if texts.len() != images.len() {
        return Err(Error::parse(
            &text_path,
            format!(
                "row counts differ: {} image rows vs {} text rows",
                images.len(),
                texts.len()
            ),
        ));
    }
    let documents = classes
        .into_iter()
        .zip(images)
        .zip(texts)
        .map(|((class, image), text)| Document { image, text, class })
        .collect();
    Dataset::from_documents(documents)
}

fn parse_float_fields(record: &csv::StringRecord, skip: usize, index: usize) -> Result<Vec<f64>> {
    record
        .iter()
        .skip(skip)
        .map(|field| {
            field.trim().parse::<f64>().map_err(|_| Error::Record {
                index,
                message: format!("feature value does not parse as a number: {field:?}"),
            })
        })
        .collect()
}

fn save_csv_pair(dataset: &Dataset, path: &Path) -> Result<()> {
    let (image_path, text_path) = csv_pair_paths(path);

    let mut writer = csv::Writer::from_path(&image_path)
        .map_err(|e| Error::parse(&image_path, e.to_string()))?;
    let mut header = vec!["class".to_string()];
    header.extend((0..dataset.d_image()).map(|j| format!("img_{j}")));
    writer
        .write_record(&header)
        .map_err(|e| Error::parse(&image_path, e.to_string()))?;
    for doc in dataset.documents() {
        let mut row = vec![dataset.original_class_id(doc.class).to_string()];
        row.extend(doc.image.iter().map(f64::to_string));
        writer
            .write_record(&row)
            .map_err(|e| Error::parse(&image_path, e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(&image_path, e))?;

    let mut writer =
        csv::Writer::from_path(&text_path).map_err(|e| Error::parse(&text_path, e.to_string()))?;
    let header: Vec<String> = (0..dataset.d_text()).map(|j| format!("txt_{j}")).collect();
    writer
        .write_record(&header)
        .map_err(|e| Error::parse(&text_path, e.to_string()))?;
    for doc in dataset.documents() {
        let row: Vec<String> = doc.text.iter().map(f64::to_string).collect();
        writer
            .write_record(&row)
            .map_err(|e| Error::parse(&text_path, e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(&text_path, e))
}

/// Parameters of the synthetic generator: `n` documents over `num_classes`
/// classes whose latent vectors live in `shared_dim` dimensions, pushed
/// through seeded orthonormal-row maps into each modality and perturbed by
/// isotropic Gaussian noise of scale `noise_sigma`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n: usize,
    pub d_image: usize,
    pub d_text: usize,
    pub num_classes: usize,
    pub shared_dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidArgument(
                "num_classes must be at least 1".into(),
            ));
        }
        if self.n < self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "n = {} documents cannot cover {} classes",
                self.n, self.num_classes
            )));
        }
        if self.shared_dim == 0 {
            return Err(Error::InvalidArgument(
                "shared_dim must be at least 1".into(),
            ));
        }
        let limit = self.d_image.min(self.d_text);
        if self.shared_dim > limit {
            return Err(Error::InvalidArgument(format!(
                "shared_dim {} exceeds min(d_image, d_text) = {limit}",
                self.shared_dim
            )));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument(
                "noise_sigma must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Class mean in the latent space: widely separated points on the canonical
/// axes, reusing axes with flipped sign and growing magnitude when there
/// are more classes than latent dimensions.
fn class_mean(class: usize, shared_dim: usize) -> Vec<f64> {
    let block = class / shared_dim;
    let axis = class % shared_dim;
    let sign = if block.is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut mean = vec![0.0; shared_dim];
    mean[axis] = sign * 4.0 * (1 + block) as f64;
    mean
}

/// Correlated two-modal data: both modalities are linear images of one
/// latent vector per document, plus independent noise. Deterministic for a
/// fixed spec.
pub fn generate_synthetic(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Round-robin class assignment then a seeded shuffle: per-class counts
    // stay within one of n/m, so any reasonable split keeps full coverage.
    let mut classes: Vec<usize> = (0..spec.n).map(|i| i % spec.num_classes).collect();
    classes.shuffle(&mut rng);
    let map_image = random_orthonormal(spec.d_image, spec.shared_dim, rng.random())?.transpose();
    let map_text = random_orthonormal(spec.d_text, spec.shared_dim, rng.random())?.transpose();
    let mut documents = Vec::with_capacity(spec.n);
    for &class in &classes {
        let mut latent = class_mean(class, spec.shared_dim);
        for z in &mut latent {
            *z += 0.5 * rng.sample::<f64, _>(StandardNormal);
        }
        // Noise is always drawn, so datasets differing only in noise_sigma
        // share their latent vectors for a given seed.
        let mut image = project_latent(&latent, &map_image);
        for x in &mut image {
            *x += spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
        let mut text = project_latent(&latent, &map_text);
        for x in &mut text {
            *x += spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
        documents.push(Document { image, text, class });
    }
    Dataset::from_documents(documents)
}

/// Row vector (1×s) times map (s×d).
fn project_latent(latent: &[f64], map: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; map.cols()];
    for (k, &z) in latent.iter().enumerate() {
        if z == 0.0 {
            continue;
        }
        for (o, &m) in out.iter_mut().zip(map.row(k)) {
            *o += z * m;
        }
    }
    out
}

/// A deterministic k-fold split: `assignments[i]` is document i's test fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    num_folds: usize,
    assignments: Vec<usize>,
    seed: u64,
}

impl FoldPlan {
    pub fn num_folds(&self) -> usize {
        self.num_folds
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    /// Document indices held out by the given fold, in document order.
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        assert!(fold < self.num_folds, "fold index out of range");
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    /// Document indices trained on for the given fold, in document order.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        assert!(fold < self.num_folds, "fold index out of range");
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }
}

/// Seeded balanced split into k folds; sizes differ by at most one.
pub fn make_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    let n = dataset.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "cross-validation needs at least 2 folds, got {k}"
        )));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} documents into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignments = vec![0usize; n];
    for (position, &doc) in order.iter().enumerate() {
        assignments[doc] = position % k;
    }
    Ok(FoldPlan {
        num_folds: k,
        assignments,
        seed,
    })
}

/// Per-coordinate affine transform fitted on a training split: subtract
/// the mean, divide by the population standard deviation. Zero-spread
/// coordinates keep scale 1 so no division blows up.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Standardizer {
    image_mean: Vec<f64>,
    image_scale: Vec<f64>,
    text_mean: Vec<f64>,
    text_scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(dataset: &Dataset) -> Self {
        let (image_mean, image_scale) =
            column_stats(dataset.documents(), dataset.d_image(), |d| &d.image);
        let (text_mean, text_scale) =
            column_stats(dataset.documents(), dataset.d_text(), |d| &d.text);
        Self {
            image_mean,
            image_scale,
            text_mean,
            text_scale,
        }
    }

    pub fn apply_image(&self, features: &[f64]) -> Result<Vec<f64>> {
        standardize_vector(
            features,
            &self.image_mean,
            &self.image_scale,
            "image features",
        )
    }

    pub fn apply_text(&self, features: &[f64]) -> Result<Vec<f64>> {
        standardize_vector(features, &self.text_mean, &self.text_scale, "text features")
    }

    /// Transforms every document of a dimension-compatible dataset.
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        let documents = dataset
            .documents()
            .iter()
            .map(|doc| {
                Ok(Document {
                    image: self.apply_image(&doc.image)?,
                    text: self.apply_text(&doc.text)?,
                    class: doc.class,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            documents,
            d_image: dataset.d_image,
            d_text: dataset.d_text,
            class_ids: dataset.class_ids.clone(),
        })
    }
}

fn standardize_vector(
    features: &[f64],
    mean: &[f64],
    scale: &[f64],
    context: &str,
) -> Result<Vec<f64>> {
    if features.len() != mean.len() {
        return Err(Error::DimensionMismatch {
            context: format!("standardizer over {context}"),
            expected: mean.len(),
            got: features.len(),
        });
    }
    Ok(features
        .iter()
        .zip(mean.iter().zip(scale))
        .map(|(&x, (&mu, &s))| (x - mu) / s)
        .collect())
}

fn column_stats<F>(documents: &[Document], dims: usize, select: F) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(&Document) -> &Vec<f64>,
{
    let n = documents.len() as f64;
    let mut mean = vec![0.0; dims];
    for doc in documents {
        for (m, &x) in mean.iter_mut().zip(select(doc)) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut scale = vec![0.0; dims];
    for doc in documents {
        for (s, (&x, &mu)) in scale.iter_mut().zip(select(doc).iter().zip(&mean)) {
            *s += (x - mu) * (x - mu);
        }
    }
    for s in &mut scale {
        *s = (*s / n).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    (mean, scale)
}
