//! Dataset directory layout.
//!
//! ```text
//! <dir>/
//!   metadata.json         {"schema_version": 1, "benchmark": ..., "embedding": ...}   (optional)
//!   models.csv            model_id,family_id,benchmark_score
//!   queries.csv           query_id            (row order is the canonical query order)
//!   embeddings.jsonl      {"model_id","query_id","replicate","vector":[...]} per line
//!   embeddings.bin        packed alternative to embeddings.jsonl (see below)
//!   response_scores.csv   model_id,query_id,score                                    (optional)
//!   correctness.csv       model_id,query_id,correct   with correct in {0,1}          (optional)
//! ```
//!
//! `embeddings.bin` starts with the 8-byte magic `DKPSEMB1`, followed by five
//! little-endian `u32`s: schema version, embedding dimension `p`, model count,
//! query count and replicate count `r`. The payload is little-endian `f32`
//! values in `[model][query][replicate][p]` order, where models and queries
//! follow the row order of `models.csv` and `queries.csv`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    BenchmarkDataset, CorrectnessRecord, DatasetRecords, EmbeddedResponse, FamilyId, Metadata,
    ModelId, ModelRecord, QueryId, ResponseScore, SCHEMA_VERSION,
};
use crate::error::{Error, Result};

pub const MODELS_FILE: &str = "models.csv";
pub const QUERIES_FILE: &str = "queries.csv";
pub const EMBEDDINGS_JSONL: &str = "embeddings.jsonl";
pub const EMBEDDINGS_BIN: &str = "embeddings.bin";
pub const RESPONSE_SCORES_FILE: &str = "response_scores.csv";
pub const CORRECTNESS_FILE: &str = "correctness.csv";
pub const METADATA_FILE: &str = "metadata.json";

/// Every file name a dataset directory may contain.
pub const DATASET_FILES: [&str; 7] = [
    METADATA_FILE,
    MODELS_FILE,
    QUERIES_FILE,
    EMBEDDINGS_JSONL,
    EMBEDDINGS_BIN,
    RESPONSE_SCORES_FILE,
    CORRECTNESS_FILE,
];

const BIN_MAGIC: &[u8; 8] = b"DKPSEMB1";

/// How embedded responses are stored on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    /// Packed little-endian `f32` payload (`embeddings.bin`).
    Columnar,
    /// One JSON object per line (`embeddings.jsonl`).
    RecordLines,
}

impl EmbeddingFormat {
    /// Picks the format present in `dir`, preferring record lines.
    pub fn detect(dir: &Path) -> Result<Self> {
        if dir.join(EMBEDDINGS_JSONL).is_file() {
            Ok(EmbeddingFormat::RecordLines)
        } else if dir.join(EMBEDDINGS_BIN).is_file() {
            Ok(EmbeddingFormat::Columnar)
        } else {
            Err(Error::io(
                dir.join(EMBEDDINGS_JSONL),
                std::io::Error::new(std::io::ErrorKind::NotFound, "no embeddings file found"),
            ))
        }
    }
}

impl std::str::FromStr for EmbeddingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "columnar" | "bin" => Ok(EmbeddingFormat::Columnar),
            "record-lines" | "jsonl" => Ok(EmbeddingFormat::RecordLines),
            other => Err(Error::invalid(format!(
                "unknown embedding format '{other}'"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MetadataFile {
    #[serde(default = "default_schema")]
    schema_version: u32,
    benchmark: String,
    embedding: String,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

#[derive(Serialize, Deserialize)]
struct ModelRow {
    model_id: String,
    family_id: String,
    benchmark_score: f64,
}

#[derive(Serialize, Deserialize)]
struct QueryRow {
    query_id: String,
}

#[derive(Serialize, Deserialize)]
struct ScoreRow {
    model_id: String,
    query_id: String,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct CorrectnessRow {
    model_id: String,
    query_id: String,
    correct: u8,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingLine {
    model_id: String,
    query_id: String,
    replicate: u32,
    vector: Vec<f32>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        location: format!("{}:{line}", path.display()),
        message: err.to_string(),
    }
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(open(path)?));
    reader
        .deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

fn read_optional_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<Vec<T>>> {
    if path.is_file() {
        read_csv(path).map(Some)
    } else {
        Ok(None)
    }
}

fn read_embeddings_jsonl(path: &Path) -> Result<Vec<EmbeddedResponse>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            location: format!("{}:{}", path.display(), lineno + 1),
            message: e.to_string(),
        })?;
        out.push(EmbeddedResponse {
            model: rec.model_id.into(),
            query: rec.query_id.into(),
            replicate: rec.replicate,
            vector: rec.vector,
        });
    }
    Ok(out)
}

fn read_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().expect("4-byte slice"))
}

fn read_embeddings_bin(
    path: &Path,
    models: &[ModelRecord],
    queries: &[QueryId],
) -> Result<Vec<EmbeddedResponse>> {
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Parse {
        location: path.display().to_string(),
        message,
    };
    const HEADER: usize = 8 + 5 * 4;
    if bytes.len() < HEADER || &bytes[..8] != BIN_MAGIC {
        return Err(bad("missing DKPSEMB1 header".into()));
    }
    let version = read_u32(&bytes, 8);
    if version != SCHEMA_VERSION {
        return Err(bad(format!(
            "schema version {version} is not supported (expected {SCHEMA_VERSION})"
        )));
    }
    let dim = read_u32(&bytes, 12) as usize;
    let n_models = read_u32(&bytes, 16) as usize;
    let n_queries = read_u32(&bytes, 20) as usize;
    let reps = read_u32(&bytes, 24) as usize;
    if n_models != models.len() || n_queries != queries.len() {
        return Err(bad(format!(
            "header declares {n_models} models x {n_queries} queries, but {MODELS_FILE} / {QUERIES_FILE} list {} x {}",
            models.len(),
            queries.len()
        )));
    }
    let expected = n_models * n_queries * reps * dim * 4;
    let payload = &bytes[HEADER..];
    if payload.len() != expected {
        return Err(bad(format!(
            "payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")));
    let mut out = Vec::with_capacity(n_models * n_queries * reps);
    for m in models {
        for q in queries {
            for r in 0..reps {
                out.push(EmbeddedResponse {
                    model: m.id.clone(),
                    query: q.clone(),
                    replicate: r as u32,
                    vector: values.by_ref().take(dim).collect(),
                });
            }
        }
    }
    Ok(out)
}

/// Parses a dataset directory without enforcing dataset invariants.
pub fn read_records(dir: &Path, format: EmbeddingFormat) -> Result<DatasetRecords> {
    let metadata_path = dir.join(METADATA_FILE);
    let metadata = if metadata_path.is_file() {
        let text = fs::read_to_string(&metadata_path).map_err(|e| Error::io(&metadata_path, e))?;
        let file: MetadataFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            location: metadata_path.display().to_string(),
            message: e.to_string(),
        })?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "{}: schema version {} is not supported (expected {SCHEMA_VERSION})",
                metadata_path.display(),
                file.schema_version
            )));
        }
        Metadata {
            benchmark: file.benchmark,
            embedding: file.embedding,
        }
    } else {
        Metadata::default()
    };

    let models: Vec<ModelRecord> = read_csv::<ModelRow>(&dir.join(MODELS_FILE))?
        .into_iter()
        .map(|r| ModelRecord {
            id: ModelId::from(r.model_id),
            family: FamilyId::from(r.family_id),
            benchmark_score: r.benchmark_score,
        })
        .collect();
    let queries: Vec<QueryId> = read_csv::<QueryRow>(&dir.join(QUERIES_FILE))?
        .into_iter()
        .map(|r| QueryId::from(r.query_id))
        .collect();

    let embeddings = match format {
        EmbeddingFormat::RecordLines => read_embeddings_jsonl(&dir.join(EMBEDDINGS_JSONL))?,
        EmbeddingFormat::Columnar => {
            read_embeddings_bin(&dir.join(EMBEDDINGS_BIN), &models, &queries)?
        }
    };

    let response_scores =
        read_optional_csv::<ScoreRow>(&dir.join(RESPONSE_SCORES_FILE))?.map(|rows| {
            rows.into_iter()
                .map(|r| ResponseScore {
                    model: r.model_id.into(),
                    query: r.query_id.into(),
                    score: r.score,
                })
                .collect()
        });

    let correctness_path = dir.join(CORRECTNESS_FILE);
    let correctness = match read_optional_csv::<CorrectnessRow>(&correctness_path)? {
        None => None,
        Some(rows) => {
            let mut out = Vec::with_capacity(rows.len());
            for (i, r) in rows.into_iter().enumerate() {
                if r.correct > 1 {
                    return Err(Error::Parse {
                        location: format!("{}:{}", correctness_path.display(), i + 2),
                        message: format!("correct must be 0 or 1, got {}", r.correct),
                    });
                }
                out.push(CorrectnessRecord {
                    model: r.model_id.into(),
                    query: r.query_id.into(),
                    correct: r.correct == 1,
                });
            }
            Some(out)
        }
    };

    Ok(DatasetRecords {
        metadata,
        models,
        queries,
        embeddings,
        response_scores,
        correctness,
    })
}

/// Reads and validates a dataset directory.
pub fn load_dataset(dir: &Path, format: EmbeddingFormat) -> Result<BenchmarkDataset> {
    BenchmarkDataset::from_records(read_records(dir, format)?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut writer = csv::Writer::from_writer(create(path)?);
    for row in rows {
        writer.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Writes `dataset` into `dir` (created if needed) in the documented layout.
pub fn save_dataset(dataset: &BenchmarkDataset, dir: &Path, format: EmbeddingFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let meta = MetadataFile {
        schema_version: SCHEMA_VERSION,
        benchmark: dataset.metadata().benchmark.clone(),
        embedding: dataset.metadata().embedding.clone(),
    };
    let meta_path = dir.join(METADATA_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))?;

    write_csv(
        &dir.join(MODELS_FILE),
        dataset.models().iter().map(|m| ModelRow {
            model_id: m.id.to_string(),
            family_id: m.family.to_string(),
            benchmark_score: m.benchmark_score,
        }),
    )?;
    write_csv(
        &dir.join(QUERIES_FILE),
        dataset.queries().iter().map(|q| QueryRow {
            query_id: q.to_string(),
        }),
    )?;

    // Leave exactly one embeddings file behind so format detection is unambiguous.
    let (path, stale): (PathBuf, PathBuf) = match format {
        EmbeddingFormat::RecordLines => (dir.join(EMBEDDINGS_JSONL), dir.join(EMBEDDINGS_BIN)),
        EmbeddingFormat::Columnar => (dir.join(EMBEDDINGS_BIN), dir.join(EMBEDDINGS_JSONL)),
    };
    if stale.is_file() {
        fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
    }
    let mut out = create(&path)?;
    let io_err = |e| Error::io(&path, e);
    match format {
        EmbeddingFormat::RecordLines => {
            for (i, m) in dataset.models().iter().enumerate() {
                for (j, q) in dataset.queries().iter().enumerate() {
                    for r in 0..dataset.replicates() {
                        let line = EmbeddingLine {
                            model_id: m.id.to_string(),
                            query_id: q.to_string(),
                            replicate: r as u32,
                            vector: dataset.embedding(i, j, r).to_vec(),
                        };
                        serde_json::to_writer(&mut out, &line).expect("embedding serializes");
                        out.write_all(b"\n").map_err(io_err)?;
                    }
                }
            }
        }
        EmbeddingFormat::Columnar => {
            out.write_all(BIN_MAGIC).map_err(io_err)?;
            for v in [
                SCHEMA_VERSION,
                dataset.embedding_dim() as u32,
                dataset.num_models() as u32,
                dataset.num_queries() as u32,
                dataset.replicates() as u32,
            ] {
                out.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
            for i in 0..dataset.num_models() {
                for j in 0..dataset.num_queries() {
                    for r in 0..dataset.replicates() {
                        for x in dataset.embedding(i, j, r) {
                            out.write_all(&x.to_le_bytes()).map_err(io_err)?;
                        }
                    }
                }
            }
        }
    }
    out.flush().map_err(io_err)?;

    let records = dataset.to_records();
    for (file, present) in [
        (RESPONSE_SCORES_FILE, records.response_scores.is_some()),
        (CORRECTNESS_FILE, records.correctness.is_some()),
    ] {
        let p = dir.join(file);
        if !present && p.is_file() {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    if let Some(scores) = records.response_scores {
        write_csv(
            &dir.join(RESPONSE_SCORES_FILE),
            scores.into_iter().map(|s| ScoreRow {
                model_id: s.model.to_string(),
                query_id: s.query.to_string(),
                score: s.score,
            }),
        )?;
    }
    if let Some(correct) = records.correctness {
        write_csv(
            &dir.join(CORRECTNESS_FILE),
            correct.into_iter().map(|c| CorrectnessRow {
                model_id: c.model.to_string(),
                query_id: c.query.to_string(),
                correct: c.correct as u8,
            }),
        )?;
    }
    Ok(())
}
