//! Monolingual word embeddings.
//!
//! Two on-disk formats are supported:
//!
//! - the whitespace-delimited text format written by most embedding trainers: a
//!   header line `vocab_size dimension`, then one token followed by `dimension`
//!   floats per line;
//! - a binary cache (`BLXE` magic) holding the same data as little-endian `f32`
//!   rows, which reloads bit-exactly.
//!
//! Tokens are stored verbatim. No case folding is applied because named-entity
//! detection downstream relies on surface capitalization.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

const BINARY_MAGIC: &[u8; 4] = b"BLXE";
const BINARY_VERSION: u8 = 1;

/// Options applied while loading an embedding file.
#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    pub language: String,
    /// Keep only the first `limit` rows. Files are assumed frequency-sorted.
    pub limit: Option<usize>,
    /// Scale every vector to unit Euclidean norm.
    pub normalize: bool,
}

impl LoadOptions {
    pub fn new(language: impl Into<String>) -> Self {
        LoadOptions {
            language: language.into(),
            ..Default::default()
        }
    }

    pub fn limit(mut self, limit: Option<usize>) -> Self {
        self.limit = limit;
        self
    }

    pub fn normalize(mut self, normalize: bool) -> Self {
        self.normalize = normalize;
        self
    }
}

/// What happened while reading an embedding file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub duplicates: usize,
}

/// Token → vector table for one language.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    language: String,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Array2<f32>,
}

impl EmbeddingStore {
    /// Builds a store from parallel token and row lists.
    ///
    /// Fails on duplicate tokens, non-finite components, an empty vocabulary or a
    /// zero dimension.
    pub fn new(language: impl Into<String>, vocab: Vec<String>, matrix: Array2<f32>) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::Empty("vocabulary"));
        }
        if matrix.nrows() != vocab.len() {
            return Err(Error::Dimension(format!(
                "{} tokens but {} rows",
                vocab.len(),
                matrix.nrows()
            )));
        }
        if matrix.ncols() == 0 {
            return Err(Error::Dimension("zero-dimensional vectors".into()));
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, token) in vocab.iter().enumerate() {
            if index.insert(token.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {token:?}")));
            }
        }
        if let Some((row, v)) = matrix
            .indexed_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|((r, _), v)| (r, *v))
        {
            return Err(Error::NonFinite {
                line: row + 1,
                value: v as f64,
            });
        }
        Ok(EmbeddingStore {
            language: language.into(),
            vocab,
            index,
            matrix,
        })
    }

    /// Loads a text or binary embedding file, detected by its leading bytes.
    pub fn load(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<(Self, LoadReport)> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let is_binary = reader
            .fill_buf()
            .map_err(|e| Error::io(path, e))?
            .starts_with(BINARY_MAGIC);
        if is_binary {
            let store = Self::read_binary(&mut reader, opts)?;
            let rows = store.len();
            Ok((store, LoadReport { rows_read: rows, duplicates: 0 }))
        } else {
            Self::read_text(reader, opts)
        }
    }

    /// Reads the text format.
    pub fn read_text<R: BufRead>(reader: R, opts: &LoadOptions) -> Result<(Self, LoadReport)> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(line) => line?,
            None => {
                return Err(Error::MalformedHeader {
                    line: 1,
                    reason: "missing header".into(),
                })
            }
        };
        let (declared, dim) = parse_header(&header)?;
        let wanted = opts.limit.map_or(declared, |l| l.min(declared));

        let mut vocab = Vec::with_capacity(wanted);
        let mut index = HashMap::with_capacity(wanted);
        let mut data = Vec::with_capacity(wanted * dim);
        let mut report = LoadReport::default();

        for (lineno, line) in (2..).zip(lines) {
            if report.rows_read == wanted {
                if opts.limit.is_some() {
                    break;
                }
                if line?.trim().is_empty() {
                    continue;
                }
                return Err(Error::MalformedHeader {
                    line: 1,
                    reason: format!("header declares {declared} rows but more follow"),
                });
            }
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (token, rest) = match line.find(char::is_whitespace) {
                Some(pos) => (&line[..pos], &line[pos..]),
                None => (line, ""),
            };
            let start = data.len();
            for field in rest.split_whitespace() {
                let value: f32 = field.parse().map_err(|_| Error::NonNumeric {
                    line: lineno,
                    value: field.to_owned(),
                })?;
                if !value.is_finite() {
                    return Err(Error::NonFinite {
                        line: lineno,
                        value: value as f64,
                    });
                }
                data.push(value);
            }
            let found = data.len() - start;
            if found != dim {
                return Err(Error::ArityMismatch {
                    line: lineno,
                    expected: dim,
                    found,
                });
            }
            report.rows_read += 1;
            if index.contains_key(token) {
                report.duplicates += 1;
                data.truncate(start);
                continue;
            }
            index.insert(token.to_owned(), vocab.len());
            vocab.push(token.to_owned());
        }

        if report.rows_read < wanted {
            return Err(Error::MalformedHeader {
                line: 1,
                reason: format!("header declares {declared} rows, found {}", report.rows_read),
            });
        }
        if report.duplicates > 0 {
            log::warn!(
                "language={} dropped {} duplicate embedding rows",
                opts.language,
                report.duplicates
            );
        }
        if vocab.is_empty() {
            return Err(Error::Empty("vocabulary"));
        }
        let matrix = Array2::from_shape_vec((vocab.len(), dim), data)
            .expect("row arity checked while parsing");
        let mut store = EmbeddingStore {
            language: opts.language.clone(),
            vocab,
            index,
            matrix,
        };
        if opts.normalize {
            store.normalize();
        }
        Ok((store, report))
    }

    /// Writes the text format. Values are printed with round-trip precision.
    pub fn write_text<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "{} {}", self.len(), self.dimension())?;
        for (token, row) in self.vocab.iter().zip(self.matrix.outer_iter()) {
            write!(writer, "{token}")?;
            for v in row {
                write!(writer, " {v}")?;
            }
            writeln!(writer)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_text(BufWriter::new(file))
    }

    /// Writes the binary cache: magic, version byte, dimension (u32), vocab count
    /// (u32), length-prefixed UTF-8 tokens (u32 length), then row-major `f32`.
    /// All integers and floats are little-endian.
    pub fn write_binary<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(BINARY_MAGIC)?;
        writer.write_all(&[BINARY_VERSION])?;
        writer.write_all(&to_u32(self.dimension())?.to_le_bytes())?;
        writer.write_all(&to_u32(self.len())?.to_le_bytes())?;
        for token in &self.vocab {
            writer.write_all(&to_u32(token.len())?.to_le_bytes())?;
            writer.write_all(token.as_bytes())?;
        }
        for v in self.matrix.iter() {
            writer.write_all(&v.to_le_bytes())?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_binary(BufWriter::new(file))
    }

    /// Reads the binary cache. `limit` and `normalize` from `opts` are honoured.
    pub fn read_binary<R: Read>(mut reader: R, opts: &LoadOptions) -> Result<Self> {
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Format("bad embedding cache magic".into()));
        }
        let mut version = [0u8; 1];
        reader.read_exact(&mut version)?;
        if version[0] != BINARY_VERSION {
            return Err(Error::Format(format!("unsupported version {}", version[0])));
        }
        let dim = read_u32(&mut reader)? as usize;
        let count = read_u32(&mut reader)? as usize;
        let mut vocab = Vec::with_capacity(count);
        for _ in 0..count {
            vocab.push(read_string(&mut reader)?);
        }
        let mut bytes = vec![0u8; count * dim * 4];
        reader.read_exact(&mut bytes)?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut matrix = Array2::from_shape_vec((count, dim), data)
            .map_err(|e| Error::Format(e.to_string()))?;
        if let Some(limit) = opts.limit.filter(|&l| l < count) {
            vocab.truncate(limit);
            matrix = matrix.slice(ndarray::s![..limit, ..]).to_owned();
        }
        let mut store = Self::new(opts.language.clone(), vocab, matrix)?;
        if opts.normalize {
            store.normalize();
        }
        Ok(store)
    }

    /// Scales every row to unit Euclidean norm. All-zero rows are left unchanged.
    pub fn normalize(&mut self) {
        for mut row in self.matrix.axis_iter_mut(Axis(0)) {
            let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| (v as f64 / norm) as f32);
            }
        }
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn dimension(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn matrix(&self) -> &Array2<f32> {
        &self.matrix
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, index: usize) -> &str {
        &self.vocab[index]
    }

    pub fn lookup(&self, token: &str) -> Option<ArrayView1<'_, f32>> {
        self.index_of(token).map(|i| self.matrix.row(i))
    }

    /// Row `index` widened to double precision.
    pub fn vector_f64(&self, index: usize) -> Array1<f64> {
        self.matrix.row(index).mapv(f64::from)
    }

    /// Fraction of `tokens` that have a vector. An empty list has coverage 1.
    pub fn coverage<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        if tokens.is_empty() {
            return 1.0;
        }
        let hits = tokens.iter().filter(|t| self.contains(t.as_ref())).count();
        hits as f64 / tokens.len() as f64
    }
}

fn parse_header(header: &str) -> Result<(usize, usize)> {
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 2 {
        return Err(Error::MalformedHeader {
            line: 1,
            reason: format!("expected \"vocab_size dimension\", got {header:?}"),
        });
    }
    let parse = |s: &str, what: &str| {
        s.parse::<usize>().map_err(|_| Error::MalformedHeader {
            line: 1,
            reason: format!("{what} {s:?} is not a non-negative integer"),
        })
    };
    let count = parse(fields[0], "vocab_size")?;
    let dim = parse(fields[1], "dimension")?;
    if count == 0 {
        return Err(Error::Empty("vocabulary"));
    }
    if dim == 0 {
        return Err(Error::MalformedHeader {
            line: 1,
            reason: "dimension must be positive".into(),
        });
    }
    Ok((count, dim))
}

pub(crate) fn to_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{n} does not fit in 32 bits")))
}

pub(crate) fn read_u32<R: Read>(reader: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_string<R: Read>(reader: &mut R) -> Result<String> {
    let len = read_u32(reader)? as usize;
    let mut buf = vec![0u8; len];
    reader.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}
