//! UEMB: a flat container for id-tagged `f32` vectors.
//!
//! All integers are little-endian.
//!
//! ```text
//! header (20 bytes)
//!   magic     [u8; 4]  "UEMB" (0x55 0x45 0x4D 0x42)
//!   version   u8       1
//!   dtype     u8       0 = f32
//!   reserved  u16      0, or 1 when every row is a probability distribution
//!   dim       u32
//!   count     u64
//! record (repeated `count` times)
//!   id_len    u16
//!   id        [u8; id_len]  UTF-8
//!   modality  u8            0 = text, 1 = image
//!   vector    [f32; dim]
//! ```
//!
//! Readers reject trailing bytes after the last record.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::corpus::Modality;

pub const MAGIC: [u8; 4] = *b"UEMB";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;
pub const FLAG_PROBABILITIES: u16 = 1;

#[derive(Debug, Error)]
pub enum UembError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("unsupported dtype {0}")]
    Dtype(u8),
    #[error("unknown reserved flag {0}")]
    Flag(u16),
    #[error("unknown modality byte {0} in record {1}")]
    ModalityByte(u8, u64),
    #[error("record {0}: id is not UTF-8")]
    IdEncoding(u64),
    #[error("record {0}: id longer than 65535 bytes")]
    IdTooLong(u64),
    #[error("header declares {declared} records but the file holds {actual}")]
    CountMismatch { declared: u64, actual: u64 },
    #[error("vector `{id}` has length {got}, expected {dim}")]
    DimMismatch { id: String, got: usize, dim: usize },
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub did: String,
    pub modality: Modality,
    pub vector: Vec<f32>,
}

/// Vectors as read from (or destined for) a UEMB file.
///
/// Records are kept as written; [`crate::retriever::Index::build`] validates
/// them and packs them into a contiguous matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingStore {
    pub dim: usize,
    pub probabilities: bool,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            probabilities: false,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, did: impl Into<String>, modality: Modality, vector: Vec<f32>) {
        self.records.push(EmbeddingRecord {
            did: did.into(),
            modality,
            vector,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, did: &str) -> Option<&EmbeddingRecord> {
        self.records.iter().find(|r| r.did == did)
    }

    pub fn validate(&self) -> Result<(), UembError> {
        if self.dim == 0 {
            return Err(UembError::ZeroDim);
        }
        for r in &self.records {
            if r.vector.len() != self.dim {
                return Err(UembError::DimMismatch {
                    id: r.did.clone(),
                    got: r.vector.len(),
                    dim: self.dim,
                });
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<(), UembError> {
        self.validate()?;
        let mut out = BufWriter::new(out);
        out.write_all(&MAGIC)?;
        out.write_u8(VERSION)?;
        out.write_u8(DTYPE_F32)?;
        out.write_u16::<LittleEndian>(if self.probabilities {
            FLAG_PROBABILITIES
        } else {
            0
        })?;
        out.write_u32::<LittleEndian>(self.dim as u32)?;
        out.write_u64::<LittleEndian>(self.records.len() as u64)?;
        for (i, r) in self.records.iter().enumerate() {
            let id = r.did.as_bytes();
            let id_len = u16::try_from(id.len()).map_err(|_| UembError::IdTooLong(i as u64))?;
            out.write_u16::<LittleEndian>(id_len)?;
            out.write_all(id)?;
            out.write_u8(match r.modality {
                Modality::Text => 0,
                Modality::Image => 1,
            })?;
            for &x in &r.vector {
                out.write_f32::<LittleEndian>(x)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), UembError> {
        self.write_to(File::create(path)?)
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self, UembError> {
        let mut input = BufReader::new(input);
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(UembError::BadMagic(magic));
        }
        let version = input.read_u8()?;
        if version != VERSION {
            return Err(UembError::Version(version));
        }
        let dtype = input.read_u8()?;
        if dtype != DTYPE_F32 {
            return Err(UembError::Dtype(dtype));
        }
        let flag = input.read_u16::<LittleEndian>()?;
        if flag > FLAG_PROBABILITIES {
            return Err(UembError::Flag(flag));
        }
        let dim = input.read_u32::<LittleEndian>()? as usize;
        if dim == 0 {
            return Err(UembError::ZeroDim);
        }
        let count = input.read_u64::<LittleEndian>()?;

        // Cap the pre-allocation; a corrupt count must not exhaust memory.
        let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
        for i in 0..count {
            let id_len = match input.read_u16::<LittleEndian>() {
                Ok(n) => n as usize,
                Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                    return Err(UembError::CountMismatch {
                        declared: count,
                        actual: i,
                    })
                }
                Err(e) => return Err(e.into()),
            };
            let mut id = vec![0u8; id_len];
            input.read_exact(&mut id)?;
            let did = String::from_utf8(id).map_err(|_| UembError::IdEncoding(i))?;
            let modality = match input.read_u8()? {
                0 => Modality::Text,
                1 => Modality::Image,
                b => return Err(UembError::ModalityByte(b, i)),
            };
            let mut vector = vec![0f32; dim];
            input.read_f32_into::<LittleEndian>(&mut vector)?;
            records.push(EmbeddingRecord {
                did,
                modality,
                vector,
            });
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(UembError::CountMismatch {
                declared: count,
                actual: count + 1,
            });
        }
        Ok(Self {
            dim,
            probabilities: flag == FLAG_PROBABILITIES,
            records,
        })
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, UembError> {
        Self::read_from(File::open(path)?)
    }
}
