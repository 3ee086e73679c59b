use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, Uniform};

use super::DatasetError;
use crate::nn::{Label, Sample};
use crate::seed;

/// Overrides the directory holding the bundled `mnist10k` IDX files.
pub const DATA_DIR_ENV: &str = "OGL_DATA_DIR";

/// Labelled samples with features normalized to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct SourceDataset {
    pub name: String,
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    /// `(rows, cols)` when the features are a row-major image.
    pub image_shape: Option<(usize, usize)>,
}

impl SourceDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    pub fn class_of(&self, index: usize) -> usize {
        match &self.samples[index].label {
            Label::Class(c) => *c,
            Label::Target(_) => unreachable!("source datasets hold class labels"),
        }
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for i in 0..self.len() {
            h[self.class_of(i)] += 1;
        }
        h
    }

    /// Average-pools image features by `factor` in both directions.
    pub fn pooled(self, factor: usize) -> Result<Self, DatasetError> {
        if factor <= 1 {
            return Ok(self);
        }
        let (rows, cols) = self.image_shape.ok_or_else(|| DatasetError::Malformed {
            format: "pooling",
            message: format!("{} is not an image dataset", self.name),
        })?;
        if rows % factor != 0 || cols % factor != 0 {
            return Err(DatasetError::Malformed {
                format: "pooling",
                message: format!("{rows}x{cols} is not divisible by {factor}"),
            });
        }
        let (pr, pc) = (rows / factor, cols / factor);
        let norm = (factor * factor) as f64;
        let samples = self
            .samples
            .into_iter()
            .map(|s| {
                let mut out = vec![0.0; pr * pc];
                for r in 0..rows {
                    for c in 0..cols {
                        out[(r / factor) * pc + c / factor] += s.features[r * cols + c];
                    }
                }
                out.iter_mut().for_each(|v| *v /= norm);
                Sample { features: out, label: s.label }
            })
            .collect();
        Ok(Self {
            name: format!("{}/pool{factor}", self.name),
            samples,
            num_classes: self.num_classes,
            image_shape: Some((pr, pc)),
        })
    }

    /// Keeps a seeded uniform random subset of `limit` samples (original order preserved).
    pub fn subsample(self, limit: usize, seed: u64) -> Self {
        if limit >= self.len() {
            return self;
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut seed::rng(seed));
        let mut keep = vec![false; self.len()];
        idx[..limit].iter().for_each(|&i| keep[i] = true);
        let name = format!("{}/n{limit}", self.name);
        let samples = self.samples.into_iter().zip(keep).filter_map(|(s, k)| k.then_some(s)).collect();
        Self { name, samples, ..self }
    }
}

/// Directory of the IDX files shipped with the repository.
pub fn bundled_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist10k"))
}

/// Loads a data source.
///
/// Recognized forms:
/// * `mnist`: bundled 10 000-digit MNIST subset (IDX, gzip)
/// * `idx:<images>,<labels>`: IDX image/label pair, optionally gzip compressed
/// * `csv:<path>`: header `label,f1,f2,...`, one sample per row
/// * `synthetic:blobs?n=1000&classes=2&dim=8&seed=7&spread=0.15`: seeded Gaussian blobs
pub fn load_source(spec: &str) -> Result<SourceDataset, DatasetError> {
    if spec == "mnist" {
        let dir = bundled_data_dir();
        let ds = load_idx(&dir.join("images-idx3-ubyte.gz"), &dir.join("labels-idx1-ubyte.gz"))?;
        return Ok(SourceDataset { name: "mnist".into(), ..ds });
    }
    if let Some(rest) = spec.strip_prefix("idx:") {
        let (img, lbl) = rest.split_once(',').ok_or_else(|| DatasetError::UnknownSource(spec.into()))?;
        return load_idx(Path::new(img), Path::new(lbl));
    }
    if let Some(path) = spec.strip_prefix("csv:") {
        return load_csv(Path::new(path));
    }
    if let Some(rest) = spec.strip_prefix("synthetic:") {
        let (kind, query) = rest.split_once('?').unwrap_or((rest, ""));
        if kind != "blobs" {
            return Err(DatasetError::UnknownSource(spec.into()));
        }
        let opts = parse_query(query).map_err(|m| DatasetError::Malformed { format: "synthetic", message: m })?;
        let get = |k: &str, d: f64| opts.get(k).copied().unwrap_or(d);
        return Ok(blobs(
            get("n", 1000.0) as usize,
            get("classes", 2.0) as usize,
            get("dim", 2.0) as usize,
            get("spread", 0.15),
            get("seed", 0.0) as u64,
        ));
    }
    Err(DatasetError::UnknownSource(spec.into()))
}

fn parse_query(query: &str) -> Result<BTreeMap<String, f64>, String> {
    query
        .split('&')
        .filter(|kv| !kv.is_empty())
        .map(|kv| {
            let (k, v) = kv.split_once('=').ok_or_else(|| format!("expected key=value, got {kv:?}"))?;
            let v: f64 = v.parse().map_err(|_| format!("{k}: {v:?} is not a number"))?;
            Ok((k.to_string(), v))
        })
        .collect()
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DatasetError> {
    let io = |source| DatasetError::Io { path: path.display().to_string(), source };
    let raw = std::fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<usize, DatasetError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()) as usize)
        .ok_or_else(|| DatasetError::Malformed { format: "IDX", message: "truncated header".into() })
}

fn load_idx(images: &Path, labels: &Path) -> Result<SourceDataset, DatasetError> {
    let malformed = |m: String| DatasetError::Malformed { format: "IDX", message: m };
    let img = read_maybe_gz(images)?;
    let lbl = read_maybe_gz(labels)?;
    if be_u32(&img, 0)? != 0x0803 {
        return Err(malformed(format!("{}: not an IDX3 ubyte image file", images.display())));
    }
    if be_u32(&lbl, 0)? != 0x0801 {
        return Err(malformed(format!("{}: not an IDX1 ubyte label file", labels.display())));
    }
    let (n, rows, cols) = (be_u32(&img, 4)?, be_u32(&img, 8)?, be_u32(&img, 12)?);
    let n_labels = be_u32(&lbl, 4)?;
    if n != n_labels {
        return Err(malformed(format!("{n} images but {n_labels} labels")));
    }
    let dim = rows * cols;
    if img.len() != 16 + n * dim || lbl.len() != 8 + n {
        return Err(malformed("payload length does not match header".into()));
    }
    let num_classes = lbl[8..].iter().copied().max().map_or(0, |m| m as usize + 1);
    let samples = (0..n)
        .map(|i| {
            let px = &img[16 + i * dim..16 + (i + 1) * dim];
            Sample::class(px.iter().map(|&b| f64::from(b) / 255.0).collect(), lbl[8 + i] as usize)
        })
        .collect();
    Ok(SourceDataset {
        name: images.file_name().map_or("idx".into(), |f| f.to_string_lossy().into_owned()),
        samples,
        num_classes,
        image_shape: Some((rows, cols)),
    })
}

fn load_csv(path: &Path) -> Result<SourceDataset, DatasetError> {
    let io = |source| DatasetError::Io { path: path.display().to_string(), source };
    let malformed = |m: String| DatasetError::Malformed { format: "CSV", message: m };
    let mut reader =
        csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| malformed(e.to_string()))?;
    let header = reader.headers().map_err(|e| malformed(e.to_string()))?.clone();
    if header.get(0).map(str::trim) != Some("label") || header.len() < 2 {
        return Err(malformed("header must be `label,f1,f2,...`".into()));
    }
    let mut rows: Vec<(i64, Vec<f64>)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(e) => io(e),
            other => malformed(format!("row {line}: {other:?}")),
        })?;
        if record.len() != header.len() {
            return Err(malformed(format!("row {line}: expected {} fields, found {}", header.len(), record.len())));
        }
        let cell = |c: usize| {
            let v = record[c].trim();
            v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| DatasetError::CsvCell {
                row: line,
                column: c + 1,
                value: v.to_string(),
            })
        };
        let label = cell(0)?;
        if label.fract() != 0.0 {
            return Err(DatasetError::CsvCell { row: line, column: 1, value: record[0].to_string() });
        }
        let feats = (1..record.len()).map(cell).collect::<Result<Vec<_>, _>>()?;
        rows.push((label as i64, feats));
    }
    if let Some(&(bad, _)) = rows.iter().find(|(l, _)| *l < 0) {
        return Err(DatasetError::LabelRange { label: bad, num_classes: 0 });
    }
    let num_classes = rows.iter().map(|(l, _)| *l as usize + 1).max().unwrap_or(0);
    let mut feats: Vec<Vec<f64>> = rows.iter().map(|(_, f)| f.clone()).collect();
    min_max_normalize(&mut feats);
    let samples = rows.iter().zip(feats).map(|((l, _), f)| Sample::class(f, *l as usize)).collect();
    Ok(SourceDataset {
        name: path.file_name().map_or("csv".into(), |f| f.to_string_lossy().into_owned()),
        samples,
        num_classes,
        image_shape: None,
    })
}

fn min_max_normalize(rows: &mut [Vec<f64>]) {
    let Some(first) = rows.first() else { return };
    let dim = first.len();
    for c in 0..dim {
        let lo = rows.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for r in rows.iter_mut() {
            r[c] = if span > 0.0 { (r[c] - lo) / span } else { 0.0 };
        }
    }
}

/// Seeded isotropic Gaussian blobs, one per class, with balanced labels.
pub(crate) fn blobs(n: usize, classes: usize, dim: usize, spread: f64, seed: u64) -> SourceDataset {
    let classes = classes.max(1);
    let mut rng = seed::rng(seed);
    let center = Uniform::new(0.0, 1.0);
    let centers: Vec<Vec<f64>> = (0..classes).map(|_| (0..dim).map(|_| center.sample(&mut rng)).collect()).collect();
    let noise = Normal::new(0.0, spread.max(1e-9)).expect("valid std");
    let mut feats = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        feats.push(centers[c].iter().map(|m| m + noise.sample(&mut rng)).collect::<Vec<f64>>());
        labels.push(c);
    }
    min_max_normalize(&mut feats);
    SourceDataset {
        name: format!("blobs-{classes}x{dim}-s{seed}"),
        samples: feats.into_iter().zip(labels).map(|(f, l)| Sample::class(f, l)).collect(),
        num_classes: classes,
        image_shape: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn synthetic_blobs_contract() {
        let ds = load_source("synthetic:blobs?n=1000&classes=2&dim=5&seed=7").unwrap();
        assert_eq!(ds.len(), 1000);
        assert_eq!(ds.dim(), 5);
        assert_eq!(ds.label_histogram(), vec![500, 500]);
        assert!(ds.samples.iter().all(|s| s.features.iter().all(|v| (0.0..=1.0).contains(v))));
        let again = load_source("synthetic:blobs?n=1000&classes=2&dim=5&seed=7").unwrap();
        assert_eq!(ds.samples, again.samples);
    }

    #[test]
    fn bundled_mnist_subset() {
        let ds = load_source("mnist").unwrap();
        assert_eq!(ds.len(), 10_000);
        assert_eq!(ds.dim(), 784);
        assert_eq!(ds.num_classes, 10);
        assert!(ds.label_histogram().iter().all(|&c| c > 800));
        let pooled = ds.pooled(2).unwrap();
        assert_eq!(pooled.dim(), 196);
        assert_eq!(pooled.image_shape, Some((14, 14)));
    }

    #[test]
    fn csv_reader_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.csv");
        std::fs::write(&good, "label,f1,f2\n0,1.0,5\n1,3.0,5\n2,2.0,5\n").unwrap();
        let ds = load_source(&format!("csv:{}", good.display())).unwrap();
        assert_eq!(ds.num_classes, 3);
        assert_eq!(ds.samples[1].features, vec![1.0, 0.0]);

        let bad = dir.path().join("bad.csv");
        let mut f = std::fs::File::create(&bad).unwrap();
        writeln!(f, "label,f1,f2\n0,1.0,2.0\n1,abc,2.0").unwrap();
        match load_source(&format!("csv:{}", bad.display())) {
            Err(DatasetError::CsvCell { row: 3, column: 2, value }) => assert_eq!(value, "abc"),
            other => panic!("unexpected {other:?}"),
        }
        let neg = dir.path().join("neg.csv");
        std::fs::write(&neg, "label,f1\n-1,0.5\n").unwrap();
        assert!(matches!(load_source(&format!("csv:{}", neg.display())), Err(DatasetError::LabelRange { .. })));
    }

    #[test]
    fn idx_round_trip_uncompressed() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = (dir.path().join("i.idx"), dir.path().join("l.idx"));
        let mut ib = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        ib.extend_from_slice(&[0, 255, 51, 102, 255, 255, 0, 0]);
        std::fs::write(&img, ib).unwrap();
        std::fs::write(&lbl, [0, 0, 8, 1, 0, 0, 0, 2, 3, 1]).unwrap();
        let ds = load_source(&format!("idx:{},{}", img.display(), lbl.display())).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_classes, 4);
        assert_eq!(ds.samples[0].features, vec![0.0, 1.0, 0.2, 0.4]);
        std::fs::write(&lbl, [0, 0, 8, 1, 0, 0, 0, 3, 3, 1, 1]).unwrap();
        assert!(load_source(&format!("idx:{},{}", img.display(), lbl.display())).is_err());
    }

    #[test]
    fn unknown_sources_are_rejected() {
        assert!(matches!(load_source("parquet:x"), Err(DatasetError::UnknownSource(_))));
        assert!(matches!(load_source("synthetic:spirals"), Err(DatasetError::UnknownSource(_))));
    }

    #[test]
    fn subsample_is_seeded() {
        let ds = load_source("synthetic:blobs?n=100&classes=3&dim=2&seed=1").unwrap();
        let a = ds.clone().subsample(30, 5);
        let b = ds.clone().subsample(30, 5);
        assert_eq!(a.len(), 30);
        assert_eq!(a.samples, b.samples);
    }
}
