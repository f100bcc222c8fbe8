//! Cosine-similarity vector index.
//!
//! Vectors are L2-normalized on insert and stored as `f32` in insertion
//! order. [`VectorIndex::search`] is an exact scan; after
//! [`VectorIndex::build_clusters`] the index can also answer
//! [`VectorIndex::search_clustered`] by scanning only the `nprobe` clusters
//! whose centroids are closest to the query.
//!
//! On-disk layout (little-endian): `b"EAEF"`, `u32` version, `u32`
//! dimension, `u64` count, then `count × dimension` `f32`s. Records live in
//! a `<path>.meta.jsonl` sidecar, one JSON object per line.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lexicon::AffectVector;
use crate::segmentation::{Level, Speaker};

pub const MAGIC: &[u8; 4] = b"EAEF";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_TAU: f64 = 0.0;
pub const KMEANS_ITERATIONS: usize = 20;
pub const DEFAULT_KMEANS_SEED: u64 = 42;

/// Below this many vectors a scan runs on the calling thread.
const PARALLEL_THRESHOLD: usize = 4096;
const SCAN_CHUNK: usize = 1024;

#[derive(Debug, thiserror::Error)]
pub enum VecStoreError {
    #[error("dimension mismatch: index has {expected}, vector has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("segment id {0:?} already indexed")]
    DuplicateId(String),
    #[error("cannot index a zero or non-finite vector")]
    InvalidVector,
    #[error("query vector is zero or non-finite; cosine similarity is undefined")]
    InvalidQuery,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("nlist {nlist} must be between 1 and the vector count {count}")]
    InvalidNlist { nlist: usize, count: usize },
    #[error("nprobe {nprobe} must be between 1 and nlist {nlist}")]
    InvalidNprobe { nprobe: usize, nlist: usize },
    #[error("clusters have not been built")]
    NotClustered,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic bytes")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("{path}: truncated or oversized file ({actual} bytes, expected {expected})")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("{path}:{line}: bad metadata record: {reason}")]
    Metadata {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VecStoreError + '_ {
    move |source| VecStoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocRecord {
    pub segment_id: String,
    pub level: Level,
    pub session_id: String,
    pub speaker: Speaker,
    pub text: String,
    pub affect_summary: AffectVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub segment_id: String,
    pub similarity: f64,
    /// Insertion position in the index.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterIndex {
    centroids: Vec<Vec<f64>>,
    members: Vec<Vec<usize>>,
}

impl ClusterIndex {
    pub fn nlist(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    /// Cluster of a stored vector.
    pub fn assignment(&self, position: usize) -> Option<usize> {
        self.members.iter().position(|m| m.contains(&position))
    }
}

#[derive(Debug, Clone, Default)]
pub struct VectorIndex {
    dimension: usize,
    vectors: Vec<f32>,
    /// Euclidean norm of each stored `f32` row, for exact cosine.
    norms: Vec<f64>,
    records: Vec<DocRecord>,
    positions: HashMap<String, usize>,
    clusters: Option<ClusterIndex>,
}

/// Orders by similarity descending, then insertion position ascending.
fn rank(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

fn top_k(mut candidates: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, rank);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(rank);
    candidates
}

fn normalized_query(query: &[f64]) -> Option<Vec<f64>> {
    if !query.iter().all(|x| x.is_finite()) {
        return None;
    }
    let norm = crate::embedding::l2_norm(query);
    (norm > 0.0).then(|| query.iter().map(|x| x / norm).collect())
}

impl VectorIndex {
    pub fn new(dimension: usize) -> Self {
        VectorIndex {
            dimension,
            ..Default::default()
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[DocRecord] {
        &self.records
    }

    pub fn record(&self, position: usize) -> Option<&DocRecord> {
        self.records.get(position)
    }

    pub fn get(&self, segment_id: &str) -> Option<&DocRecord> {
        self.positions.get(segment_id).map(|p| &self.records[*p])
    }

    pub fn position(&self, segment_id: &str) -> Option<usize> {
        self.positions.get(segment_id).copied()
    }

    /// Stored (normalized, `f32`) vector at `position`.
    pub fn vector(&self, position: usize) -> &[f32] {
        &self.vectors[position * self.dimension..(position + 1) * self.dimension]
    }

    /// The whole vector block in insertion order.
    pub fn vector_block(&self) -> &[f32] {
        &self.vectors
    }

    pub fn clusters(&self) -> Option<&ClusterIndex> {
        self.clusters.as_ref()
    }

    pub fn add(&mut self, vector: &[f64], record: DocRecord) -> Result<usize, VecStoreError> {
        if vector.len() != self.dimension {
            return Err(VecStoreError::DimensionMismatch {
                expected: self.dimension,
                found: vector.len(),
            });
        }
        if self.positions.contains_key(&record.segment_id) {
            return Err(VecStoreError::DuplicateId(record.segment_id));
        }
        let unit = normalized_query(vector).ok_or(VecStoreError::InvalidVector)?;
        let row: Vec<f32> = unit.iter().map(|x| *x as f32).collect();
        let position = self.push_row(row, record);
        if let Some(clusters) = self.clusters.as_mut() {
            let target = nearest_centroid(&clusters.centroids, &unit);
            clusters.members[target].push(position);
        }
        Ok(position)
    }

    fn push_row(&mut self, row: Vec<f32>, record: DocRecord) -> usize {
        let position = self.records.len();
        self.norms.push(row_norm(&row));
        self.vectors.extend_from_slice(&row);
        self.positions.insert(record.segment_id.clone(), position);
        self.records.push(record);
        position
    }

    fn similarity(&self, position: usize, unit_query: &[f64]) -> f64 {
        let row = self.vector(position);
        let mut acc = 0.0f64;
        for (x, q) in row.iter().zip(unit_query) {
            acc += f64::from(*x) * q;
        }
        (acc / self.norms[position]).clamp(-1.0, 1.0)
    }

    fn scan<F>(&self, positions: &[usize], unit: &[f64], tau: f64, k: usize, keep: &F) -> Vec<(usize, f64)>
    where
        F: Fn(&DocRecord) -> bool + Sync,
    {
        let local = |chunk: &[usize]| {
            let hits = chunk
                .iter()
                .filter(|p| keep(&self.records[**p]))
                .map(|p| (*p, self.similarity(*p, unit)))
                .filter(|(_, s)| *s >= tau)
                .collect();
            top_k(hits, k)
        };
        if positions.len() < PARALLEL_THRESHOLD {
            return local(positions);
        }
        let merged: Vec<(usize, f64)> = positions
            .par_chunks(SCAN_CHUNK)
            .map(local)
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect();
        top_k(merged, k)
    }

    fn to_hits(&self, ranked: Vec<(usize, f64)>) -> Vec<SearchHit> {
        ranked
            .into_iter()
            .map(|(position, similarity)| SearchHit {
                segment_id: self.records[position].segment_id.clone(),
                similarity,
                position,
            })
            .collect()
    }

    fn check_query(&self, query: &[f64], k: usize) -> Result<Vec<f64>, VecStoreError> {
        if k == 0 {
            return Err(VecStoreError::InvalidK);
        }
        if query.len() != self.dimension {
            return Err(VecStoreError::DimensionMismatch {
                expected: self.dimension,
                found: query.len(),
            });
        }
        normalized_query(query).ok_or(VecStoreError::InvalidQuery)
    }

    /// Exact top-`k` by cosine similarity; hits below `tau` are dropped.
    pub fn search(&self, query: &[f64], k: usize, tau: f64) -> Result<Vec<SearchHit>, VecStoreError> {
        self.search_where(query, k, tau, |_| true)
    }

    /// [`VectorIndex::search`] restricted to records accepted by `keep`.
    pub fn search_where<F>(
        &self,
        query: &[f64],
        k: usize,
        tau: f64,
        keep: F,
    ) -> Result<Vec<SearchHit>, VecStoreError>
    where
        F: Fn(&DocRecord) -> bool + Sync,
    {
        let unit = self.check_query(query, k)?;
        let all: Vec<usize> = (0..self.len()).collect();
        Ok(self.to_hits(self.scan(&all, &unit, tau, k, &keep)))
    }

    pub fn build_clusters(&mut self, nlist: usize) -> Result<&ClusterIndex, VecStoreError> {
        self.build_clusters_seeded(nlist, DEFAULT_KMEANS_SEED)
    }

    /// Spherical k-means: k-means++ seeding, [`KMEANS_ITERATIONS`] rounds,
    /// empty clusters reseeded to the point farthest from its centroid.
    pub fn build_clusters_seeded(
        &mut self,
        nlist: usize,
        seed: u64,
    ) -> Result<&ClusterIndex, VecStoreError> {
        let count = self.len();
        if nlist == 0 || nlist > count {
            return Err(VecStoreError::InvalidNlist { nlist, count });
        }
        let points: Vec<Vec<f64>> = (0..count)
            .map(|p| {
                let n = self.norms[p];
                self.vector(p).iter().map(|x| f64::from(*x) / n).collect()
            })
            .collect();
        let clusters = kmeans(&points, nlist, seed);
        Ok(self.clusters.insert(clusters))
    }

    /// Scans the `nprobe` clusters nearest the query. Identical to
    /// [`VectorIndex::search`] when `nprobe == nlist`.
    pub fn search_clustered(
        &self,
        query: &[f64],
        k: usize,
        tau: f64,
        nprobe: usize,
    ) -> Result<Vec<SearchHit>, VecStoreError> {
        let clusters = self.clusters.as_ref().ok_or(VecStoreError::NotClustered)?;
        let nlist = clusters.nlist();
        if nprobe == 0 || nprobe > nlist {
            return Err(VecStoreError::InvalidNprobe { nprobe, nlist });
        }
        let unit = self.check_query(query, k)?;
        let mut order: Vec<(usize, f64)> = clusters
            .centroids
            .iter()
            .enumerate()
            .map(|(c, centroid)| (c, crate::embedding::dot(centroid, &unit)))
            .collect();
        order.sort_unstable_by(rank);
        let mut candidates: Vec<usize> = order[..nprobe]
            .iter()
            .flat_map(|(c, _)| clusters.members[*c].iter().copied())
            .collect();
        candidates.sort_unstable();
        Ok(self.to_hits(self.scan(&candidates, &unit, tau, k, &|_| true)))
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta.jsonl");
        PathBuf::from(s)
    }

    /// Writes the vector file and its metadata sidecar. Each file is written
    /// to a temporary name and renamed into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VecStoreError> {
        let path = path.as_ref();
        let tmp = temp_name(path);
        {
            let file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
            let mut w = BufWriter::new(file);
            let mut header = Vec::with_capacity(HEADER_LEN);
            header.extend_from_slice(MAGIC);
            header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
            header.extend_from_slice(&(self.dimension as u32).to_le_bytes());
            header.extend_from_slice(&(self.len() as u64).to_le_bytes());
            w.write_all(&header).map_err(io_err(&tmp))?;
            for x in &self.vectors {
                w.write_all(&x.to_le_bytes()).map_err(io_err(&tmp))?;
            }
            w.flush().map_err(io_err(&tmp))?;
        }
        let meta = Self::sidecar_path(path);
        let meta_tmp = temp_name(&meta);
        {
            let file = fs::File::create(&meta_tmp).map_err(io_err(&meta_tmp))?;
            let mut w = BufWriter::new(file);
            for record in &self.records {
                let line = serde_json::to_string(record).expect("records serialize");
                writeln!(w, "{line}").map_err(io_err(&meta_tmp))?;
            }
            w.flush().map_err(io_err(&meta_tmp))?;
        }
        fs::rename(&meta_tmp, &meta).map_err(io_err(&meta))?;
        fs::rename(&tmp, path).map_err(io_err(path))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VecStoreError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(io_err(path))?;
        let truncated = |expected: u64| VecStoreError::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(VecStoreError::BadMagic {
                path: path.to_path_buf(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(truncated(HEADER_LEN as u64));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(VecStoreError::UnsupportedVersion {
                path: path.to_path_buf(),
                version,
            });
        }
        let dimension = u32_at(8) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let expected = (count as u128) * (dimension as u128) * 4 + HEADER_LEN as u128;
        if expected != bytes.len() as u128 {
            return Err(truncated(u64::try_from(expected).unwrap_or(u64::MAX)));
        }
        let count = count as usize;
        let vectors: Vec<f32> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let meta = Self::sidecar_path(path);
        let file = fs::File::open(&meta).map_err(io_err(&meta))?;
        let mut records = Vec::with_capacity(count);
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(&meta))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: DocRecord =
                serde_json::from_str(&line).map_err(|e| VecStoreError::Metadata {
                    path: meta.clone(),
                    line: idx + 1,
                    reason: e.to_string(),
                })?;
            records.push(record);
        }
        if records.len() != count {
            return Err(VecStoreError::Metadata {
                path: meta,
                line: records.len(),
                reason: format!("{} records for {count} vectors", records.len()),
            });
        }

        let mut index = VectorIndex::new(dimension);
        index.vectors.reserve(vectors.len());
        for (p, record) in records.into_iter().enumerate() {
            if index.positions.contains_key(&record.segment_id) {
                return Err(VecStoreError::Metadata {
                    path: meta,
                    line: p + 1,
                    reason: format!("duplicate segment id {:?}", record.segment_id),
                });
            }
            let row = vectors[p * dimension..(p + 1) * dimension].to_vec();
            index.push_row(row, record);
        }
        Ok(index)
    }

    /// Content hash over the vector block and segment ids.
    pub fn fingerprint(&self) -> String {
        use xxhash_rust::xxh3::Xxh3;
        let mut h = Xxh3::new();
        h.update(&(self.dimension as u64).to_le_bytes());
        for x in &self.vectors {
            h.update(&x.to_le_bytes());
        }
        for r in &self.records {
            h.update(r.segment_id.as_bytes());
            h.update(&[0]);
        }
        format!("{:016x}", h.digest())
    }
}

fn row_norm(row: &[f32]) -> f64 {
    row.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt()
}

fn temp_name(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".tmp");
    PathBuf::from(s)
}

fn nearest_centroid(centroids: &[Vec<f64>], point: &[f64]) -> usize {
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let s = crate::embedding::dot(centroid, point);
        if s > best_sim {
            best = c;
            best_sim = s;
        }
    }
    best
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = crate::embedding::l2_norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// `points` must be unit vectors.
fn kmeans(points: &[Vec<f64>], nlist: usize, seed: u64) -> ClusterIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = points[0].len();

    // k-means++ seeding on cosine distance
    let mut centroids: Vec<Vec<f64>> = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut dist: Vec<f64> = points
        .iter()
        .map(|p| 1.0 - crate::embedding::dot(p, &centroids[0]))
        .collect();
    while centroids.len() < nlist {
        let total: f64 = dist.iter().map(|d| d.max(0.0)).sum();
        let next = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                target -= d.max(0.0);
                if target < 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..points.len())
        };
        let c = points[next].clone();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(1.0 - crate::embedding::dot(p, &c));
        }
        centroids.push(c);
    }

    let mut assignment = vec![0usize; points.len()];
    for _ in 0..KMEANS_ITERATIONS {
        for (a, p) in assignment.iter_mut().zip(points) {
            *a = nearest_centroid(&centroids, p);
        }
        let mut sums = vec![vec![0.0; dim]; nlist];
        let mut counts = vec![0usize; nlist];
        for (a, p) in assignment.iter().zip(points) {
            counts[*a] += 1;
            for (s, x) in sums[*a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..nlist {
            if counts[c] > 0 {
                centroids[c] = unit(std::mem::take(&mut sums[c]));
                continue;
            }
            // reseed to the point least similar to its own centroid
            let farthest = (0..points.len())
                .filter(|i| !taken.contains(i))
                .min_by(|&i, &j| {
                    let si = crate::embedding::dot(&points[i], &centroids[assignment[i]]);
                    let sj = crate::embedding::dot(&points[j], &centroids[assignment[j]]);
                    si.total_cmp(&sj).then(i.cmp(&j))
                })
                .expect("nlist <= count");
            taken.push(farthest);
            centroids[c] = points[farthest].clone();
        }
    }
    let mut members = vec![Vec::new(); nlist];
    for (i, p) in points.iter().enumerate() {
        members[nearest_centroid(&centroids, p)].push(i);
    }
    ClusterIndex { centroids, members }
}
