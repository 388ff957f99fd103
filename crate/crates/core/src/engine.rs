//! Exhaustive Euclidean matching over global descriptors.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::binio::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{l2_normalize, squared_distance, Scalar};
use crate::vlad::GlobalDescriptor;

pub const INDEX_MAGIC: &[u8; 8] = b"RSIRVLAD";

/// Candidates kept per query in the reference protocol.
pub const DEFAULT_TOP_K: usize = 20;

/// Immutable matrix of global descriptors, one row per image.
#[derive(Clone, Debug, PartialEq)]
pub struct Index<T> {
    ids: Vec<String>,
    labels: Vec<String>,
    matrix: Matrix<T>,
    /// `(k, d)` with `k·d` equal to the row length. Reduced global
    /// descriptors use `(1, D')`.
    layout: (usize, usize),
    positions: HashMap<String, usize>,
}

/// Builds an index; row order equals input order.
///
/// `labels` may be empty (labels unknown) or have one entry per
/// descriptor.
pub fn build_index<T: Scalar>(
    globals: &[GlobalDescriptor<T>],
    labels: &[String],
) -> Result<Index<T>> {
    if !labels.is_empty() && labels.len() != globals.len() {
        return Err(Error::Data(format!(
            "{} labels for {} descriptors",
            labels.len(),
            globals.len()
        )));
    }
    let dim = globals.first().map_or(0, |g| g.len());
    let mut data = Vec::with_capacity(globals.len() * dim);
    for g in globals {
        if g.len() != dim {
            return Err(Error::dim(dim, g.len()));
        }
        data.extend_from_slice(&g.values);
    }
    let ids = globals.iter().map(|g| g.image_id.clone()).collect();
    let labels = if labels.is_empty() {
        vec![String::new(); globals.len()]
    } else {
        labels.to_vec()
    };
    Index::from_parts(
        ids,
        labels,
        Matrix::from_vec(globals.len(), dim, data)?,
        (1, dim),
    )
}

impl<T: Scalar> Index<T> {
    fn from_parts(
        ids: Vec<String>,
        labels: Vec<String>,
        matrix: Matrix<T>,
        layout: (usize, usize),
    ) -> Result<Self> {
        let mut positions = HashMap::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            if positions.insert(id.clone(), row).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        let mut index = Index {
            ids,
            labels,
            matrix,
            layout: (1, 0),
            positions,
        };
        index.set_layout(layout.0, layout.1)?;
        Ok(index)
    }

    /// Records the `(k, d)` factorization of the row length.
    pub fn with_layout(mut self, k: usize, d: usize) -> Result<Self> {
        self.set_layout(k, d)?;
        Ok(self)
    }

    fn set_layout(&mut self, k: usize, d: usize) -> Result<()> {
        if k * d != self.matrix.cols() || (!self.is_empty() && k == 0) {
            return Err(Error::dim(self.matrix.cols(), k * d));
        }
        self.layout = (k, d);
        Ok(())
    }

    /// Replaces the labels by looking every id up in `labels`.
    pub fn with_labels<'a>(mut self, lookup: impl Fn(&str) -> Option<&'a str>) -> Result<Self> {
        for (id, label) in self.ids.iter().zip(self.labels.iter_mut()) {
            *label = lookup(id)
                .ok_or_else(|| Error::Manifest(format!("no label for indexed image `{id}`")))?
                .to_string();
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Row length `D`.
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn layout(&self) -> (usize, usize) {
        self.layout
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn row(&self, row: usize) -> &[T] {
        self.matrix.row(row)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    /// Row as a global descriptor.
    pub fn descriptor(&self, row: usize) -> GlobalDescriptor<T> {
        let values = self.matrix.row(row).to_vec();
        let unit = (crate::scalar::norm(&values) - 1.0).abs() < 1e-4;
        GlobalDescriptor::new(self.ids[row].clone(), values, unit)
    }

    /// The `top_k` nearest rows by Euclidean distance, ties broken by
    /// ascending row.
    pub fn search(&self, query: &[T], top_k: usize) -> Result<RankedList> {
        self.search_excluding(query, top_k, None)
    }

    /// As [`Index::search`], skipping row `exclude`.
    pub fn search_excluding(
        &self,
        query: &[T],
        top_k: usize,
        exclude: Option<usize>,
    ) -> Result<RankedList> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if query.len() != self.dim() {
            return Err(Error::dim(self.dim(), query.len()));
        }
        if top_k == 0 {
            return Err(Error::Data("top_k must be at least 1".into()));
        }
        let mut scored: Vec<(f64, usize)> = self
            .matrix
            .row_iter()
            .enumerate()
            .filter(|(row, _)| Some(*row) != exclude)
            .map(|(row, v)| (squared_distance(query, v), row))
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if top_k < scored.len() {
            scored.select_nth_unstable_by(top_k - 1, order);
            scored.truncate(top_k);
        }
        scored.sort_unstable_by(order);
        Ok(RankedList {
            entries: scored
                .into_iter()
                .map(|(sq, row)| RankedEntry {
                    row,
                    image_id: self.ids[row].clone(),
                    class_label: self.labels[row].clone(),
                    distance: sq.sqrt(),
                })
                .collect(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(INDEX_MAGIC);
        w.len_u32(self.len())?;
        w.len_u32(self.layout.0)?;
        w.len_u32(self.layout.1)?;
        for (id, row) in self.ids.iter().zip(self.matrix.row_iter()) {
            w.len_u32(id.len())?;
            w.bytes(id.as_bytes());
            w.scalars(row);
        }
        Ok(w.into_bytes())
    }

    /// Decodes an index file; labels are left empty.
    pub fn from_bytes(bytes: &[u8], source: &str) -> Result<Self> {
        let mut r = Reader::open(bytes, INDEX_MAGIC, source)?;
        let count = r.u32()? as usize;
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        let dim = k * d;
        let mut ids = Vec::with_capacity(count.min(1 << 20));
        let mut data = Vec::with_capacity(count.min(1 << 20) * dim);
        for _ in 0..count {
            let at = r.pos();
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.bytes(len)?)
                .map_err(|_| r.error_at(at, "image id is not UTF-8"))?
                .to_string();
            ids.push(id);
            data.extend(r.scalars::<T>(dim)?);
        }
        r.finish()?;
        let labels = vec![String::new(); count];
        Index::from_parts(ids, labels, Matrix::from_vec(count, dim, data)?, (k, d))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, &path.display().to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedEntry {
    pub row: usize,
    pub image_id: String,
    pub class_label: String,
    pub distance: f64,
}

/// Candidates in ascending distance.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RankedList {
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.row)
    }
}

impl fmt::Display for RankedList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (rank, e) in self.entries.iter().enumerate() {
            writeln!(
                f,
                "{:>4}  {:<24} {:<16} {:.6}",
                rank + 1,
                e.image_id,
                e.class_label,
                e.distance
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingCell {
    pub size: usize,
    pub dim: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
}

/// Single-query wall times over a grid of index sizes and dimensions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingReport {
    pub sizes: Vec<usize>,
    pub dims: Vec<usize>,
    pub repetitions: usize,
    pub top_k: usize,
    /// Row-major over `sizes × dims`.
    pub cells: Vec<TimingCell>,
}

impl TimingReport {
    pub fn cell(&self, size: usize, dim: usize) -> Option<&TimingCell> {
        self.cells.iter().find(|c| c.size == size && c.dim == dim)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("timing report serializes")
    }
}

impl fmt::Display for TimingReport {
    /// Median milliseconds; rows are index sizes, columns descriptor sizes.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>8}", "size")?;
        for d in &self.dims {
            write!(f, " {:>12}", d)?;
        }
        writeln!(f)?;
        for &s in &self.sizes {
            write!(f, "{:>8}", s)?;
            for &d in &self.dims {
                match self.cell(s, d) {
                    Some(c) => write!(f, " {:>12.4}", c.median_ms)?,
                    None => write!(f, " {:>12}", "-")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Times one full search (`top_k` candidates) against random unit-norm
/// indices for every `(size, dim)` pair. Every cell gets one warm-up query,
/// then cells are timed round-robin, one query per cell per round, so load
/// drift on the host spreads evenly over the grid.
pub fn benchmark_search<T: Scalar>(
    sizes: &[usize],
    dims: &[usize],
    repetitions: usize,
    top_k: usize,
    seed: u64,
) -> Result<TimingReport> {
    if repetitions == 0 {
        return Err(Error::Data("repetitions must be at least 1".into()));
    }
    let mut grid = Vec::with_capacity(sizes.len() * dims.len());
    for &size in sizes {
        for &dim in dims {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((size as u64) << 32) ^ dim as u64);
            let unit = |rng: &mut ChaCha8Rng| {
                let mut v: Vec<T> = (0..dim)
                    .map(|_| T::of(StandardNormal.sample(rng)))
                    .collect();
                l2_normalize(&mut v);
                v
            };
            let globals: Vec<GlobalDescriptor<T>> = (0..size)
                .map(|i| GlobalDescriptor::new(format!("img{i:06}"), unit(&mut rng), true))
                .collect();
            let index = build_index(&globals, &[])?;
            let query = unit(&mut rng);
            std::hint::black_box(index.search(&query, top_k)?);
            grid.push((size, dim, index, query));
        }
    }
    let mut times = vec![Vec::with_capacity(repetitions); grid.len()];
    for _ in 0..repetitions {
        for ((_, _, index, query), samples) in grid.iter().zip(&mut times) {
            let start = Instant::now();
            let r = index.search(std::hint::black_box(query), top_k);
            samples.push(start.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(r)?;
        }
    }
    let cells = grid
        .iter()
        .zip(&mut times)
        .map(|((size, dim, _, _), samples)| {
            let mean_ms = samples.iter().sum::<f64>() / samples.len() as f64;
            samples.sort_by(f64::total_cmp);
            let mid = samples.len() / 2;
            let median_ms = if samples.len() % 2 == 1 {
                samples[mid]
            } else {
                0.5 * (samples[mid - 1] + samples[mid])
            };
            log::debug!("benchmark size={size} dim={dim} median={median_ms:.4}ms");
            TimingCell {
                size: *size,
                dim: *dim,
                median_ms,
                mean_ms,
            }
        })
        .collect();
    Ok(TimingReport {
        sizes: sizes.to_vec(),
        dims: dims.to_vec(),
        repetitions,
        top_k,
        cells,
    })
}
