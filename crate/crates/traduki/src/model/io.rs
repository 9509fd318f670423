//! Checkpoint files: a JSON header followed by raw tensor data.
//!
//! Layout: the magic bytes `TRDK`, a little-endian u32 format version, a
//! little-endian u64 header length, the JSON header, then every tensor's
//! f64 values row-major in little-endian order. Base parameters come first
//! in schema order, adapter factors after them as down/up pairs per target.
//! Values are stored bit-exactly, so save followed by load reproduces the
//! checkpoint byte for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::lora::{LoraAdapter, LoraFactors};
use crate::model::math::Mat;
use crate::model::{CheckpointRole, ModelCheckpoint, ModelConfig, ParamSchema};
use crate::tokenizer::TokenVocabulary;

const MAGIC: [u8; 4] = *b"TRDK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    role: CheckpointRole,
    prompt_format: Option<String>,
    vocabulary: TokenVocabulary,
    vocab_sha256: String,
    tensors: Vec<TensorMeta>,
    lora: Option<LoraMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

/// Adapter metadata; factor shapes are implied by the rank and the target
/// weight shapes, and the data follows the base tensors in the file.
#[derive(Serialize, Deserialize)]
struct LoraMeta {
    rank: usize,
    alpha: f64,
    seed: u64,
}

fn vocab_sha256(vocabulary: &TokenVocabulary) -> String {
    let doc = serde_json::to_vec(vocabulary).expect("vocabulary serializes");
    hex(&Sha256::digest(&doc))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash a file's full contents, hex-encoded.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

fn write_mat(w: &mut impl Write, mat: &Mat) -> std::io::Result<()> {
    for &v in &mat.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_mat(r: &mut impl Read, rows: usize, cols: usize, path: &Path) -> Result<Mat> {
    let mut mat = Mat::zeros(rows, cols);
    let mut buf = [0u8; 8];
    for v in &mut mat.data {
        r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(mat)
}

fn build_header(model: &ModelCheckpoint) -> Header {
    let schema = model.schema();
    let mut tensors: Vec<TensorMeta> = schema
        .shapes(&model.config)
        .into_iter()
        .map(|(name, rows, cols)| TensorMeta { name, rows, cols })
        .collect();
    if let Some(adapter) = &model.lora {
        for (index, factors) in adapter.factors.iter().enumerate() {
            if let Some(f) = factors {
                tensors.push(TensorMeta {
                    name: format!("lora{index}.down"),
                    rows: f.down.rows,
                    cols: f.down.cols,
                });
                tensors.push(TensorMeta {
                    name: format!("lora{index}.up"),
                    rows: f.up.rows,
                    cols: f.up.cols,
                });
            }
        }
    }
    Header {
        config: model.config,
        role: model.role,
        prompt_format: model.prompt_format.clone(),
        vocabulary: model.vocabulary.clone(),
        vocab_sha256: vocab_sha256(&model.vocabulary),
        tensors,
        lora: model.lora.as_ref().map(|a| LoraMeta {
            rank: a.rank,
            alpha: a.alpha,
            seed: a.seed,
        }),
    }
}

fn emit(w: &mut impl Write, model: &ModelCheckpoint) -> std::io::Result<()> {
    let header_bytes = serde_json::to_vec(&build_header(model)).expect("header serializes");
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for mat in &model.params {
        write_mat(w, mat)?;
    }
    if let Some(adapter) = &model.lora {
        for factors in adapter.factors.iter().flatten() {
            write_mat(w, &factors.down)?;
            write_mat(w, &factors.up)?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, model: &ModelCheckpoint) -> Result<()> {
    model.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    emit(&mut w, model).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Content hash of a checkpoint: the digest of the exact bytes
/// [`save_checkpoint`] would write.
pub fn checkpoint_sha256(model: &ModelCheckpoint) -> Result<String> {
    model.validate()?;
    let mut hasher = Sha256::new();
    emit(&mut hasher, model).expect("hashing cannot fail");
    Ok(hex(&hasher.finalize()))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if magic != MAGIC {
        return Err(Error::parse(path, "not a checkpoint file (bad magic)"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|e| Error::io(path, e))?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::parse(
            path,
            format!("unsupported checkpoint version {version}, expected {VERSION}"),
        ));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes).map_err(|e| Error::io(path, e))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::parse(path, format!("malformed header: {e}")))?;

    if vocab_sha256(&header.vocabulary) != header.vocab_sha256 {
        return Err(Error::parse(path, "vocabulary hash mismatch"));
    }
    let schema = ParamSchema::new(&header.config);
    let expected: Vec<(String, usize, usize)> = schema.shapes(&header.config);
    if header.tensors.len() < expected.len() {
        return Err(Error::parse(path, "tensor manifest is shorter than the schema"));
    }
    for (meta, (name, rows, cols)) in header.tensors.iter().zip(&expected) {
        if &meta.name != name || meta.rows != *rows || meta.cols != *cols {
            return Err(Error::parse(
                path,
                format!(
                    "tensor {} has shape {}x{}, expected {name} {rows}x{cols}",
                    meta.name, meta.rows, meta.cols
                ),
            ));
        }
    }

    let mut params = Vec::with_capacity(expected.len());
    for meta in &header.tensors[..expected.len()] {
        params.push(read_mat(&mut r, meta.rows, meta.cols, path)?);
    }
    let lora = match &header.lora {
        None => {
            if header.tensors.len() != expected.len() {
                return Err(Error::parse(path, "extra tensors without adapter metadata"));
            }
            None
        }
        Some(meta) => {
            let mut factors: Vec<Option<LoraFactors>> = vec![None; schema.tensor_count()];
            let mut cursor = expected.len();
            for (index, slot) in factors.iter_mut().enumerate() {
                if !schema.is_layer_mat(index) {
                    continue;
                }
                let pair = header.tensors.get(cursor..cursor + 2).ok_or_else(|| {
                    Error::parse(path, "tensor manifest is missing adapter factors")
                })?;
                if pair[0].name != format!("lora{index}.down")
                    || pair[1].name != format!("lora{index}.up")
                {
                    return Err(Error::parse(
                        path,
                        format!("unexpected adapter tensors {} / {}", pair[0].name, pair[1].name),
                    ));
                }
                let down = read_mat(&mut r, pair[0].rows, pair[0].cols, path)?;
                let up = read_mat(&mut r, pair[1].rows, pair[1].cols, path)?;
                *slot = Some(LoraFactors { down, up });
                cursor += 2;
            }
            if cursor != header.tensors.len() {
                return Err(Error::parse(path, "tensor manifest has unconsumed entries"));
            }
            Some(LoraAdapter {
                rank: meta.rank,
                alpha: meta.alpha,
                seed: meta.seed,
                factors,
            })
        }
    };

    let mut tail = [0u8; 1];
    match r.read(&mut tail) {
        Ok(0) => {}
        Ok(_) => return Err(Error::parse(path, "trailing bytes after tensor data")),
        Err(e) => return Err(Error::io(path, e)),
    }

    let model = ModelCheckpoint {
        config: header.config,
        role: header.role,
        prompt_format: header.prompt_format,
        params,
        vocabulary: header.vocabulary,
        lora,
    };
    model.validate()?;
    Ok(model)
}
