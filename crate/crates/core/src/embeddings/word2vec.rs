//! Readers and writers for the word2vec text and binary formats.
//!
//! Both formats start with an ASCII header `"<vocab-count> <dim>\n"`. The text
//! format follows with one line per entry: the token and `dim` decimal
//! numbers, space separated. The binary format follows with, per entry, the
//! token bytes, a single space, `dim` little-endian IEEE-754 `f32` values and
//! an optional newline. Values are stored as `f32` and widened on load.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use super::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// Tokens longer than this are treated as file corruption.
pub const MAX_TOKEN_BYTES: usize = 1000;

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let fields: Vec<&str> = line.split_ascii_whitespace().collect();
    let [count, dim] = fields[..] else {
        return Err(Error::MalformedHeader(format!("expected \"<vocab-count> <dim>\", got {line:?}")));
    };
    let count = count
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("bad vocabulary count {count:?}")))?;
    let dim: usize = dim
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("bad dimension {dim:?}")))?;
    if dim == 0 {
        return Err(Error::MalformedHeader("dimension must be positive".into()));
    }
    Ok((count, dim))
}

/// Duplicate tokens are rejected by [`EmbeddingTable::new`].
fn build_table(words: Vec<String>, values: Vec<f64>, dim: usize) -> Result<EmbeddingTable> {
    let rows = words.len();
    EmbeddingTable::new(words, Matrix::new(rows, dim, values)?)
}

/// Parses the text format from an in-memory string.
pub fn read_word2vec_text(content: &str) -> Result<EmbeddingTable> {
    let mut lines = content.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader("empty file".into()))?;
    let (count, dim) = parse_header(header)?;

    let mut words = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count * dim);
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let index = words.len();
        if index == count {
            return Err(Error::BadEntry {
                index,
                message: format!("header declares {count} entries but more follow"),
            });
        }
        let mut fields = line.split_ascii_whitespace();
        let token = fields.next().unwrap_or_default();
        let numbers: Vec<&str> = fields.collect();
        if numbers.len() != dim {
            return Err(Error::BadEntry {
                index,
                message: format!("expected {dim} values after token {token:?}, found {}", numbers.len()),
            });
        }
        for field in numbers {
            let v: f32 = field.parse().map_err(|_| Error::BadEntry {
                index,
                message: format!("non-numeric value {field:?}"),
            })?;
            values.push(f64::from(v));
        }
        words.push(token.to_owned());
    }
    if words.len() < count {
        return Err(Error::TruncatedTable(format!(
            "header declares {count} entries, found {}",
            words.len()
        )));
    }
    build_table(words, values, dim)
}

/// Parses the binary format from an in-memory buffer.
pub fn read_word2vec_binary(bytes: &[u8]) -> Result<EmbeddingTable> {
    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::MalformedHeader("header is not ASCII".into()))?;
    let (count, dim) = parse_header(header)?;

    let mut pos = header_end + 1;
    let mut words: Vec<String> = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count * dim);
    let vector_bytes = dim * 4;
    for index in 0..count {
        if bytes.get(pos) == Some(&b'\n') {
            pos += 1;
        }
        let rest = &bytes[pos..];
        let token_len = match rest.iter().take(MAX_TOKEN_BYTES + 1).position(|&b| b == b' ') {
            Some(len) => len,
            None if rest.len() > MAX_TOKEN_BYTES => {
                return Err(Error::BadEntry {
                    index,
                    message: format!("token longer than {MAX_TOKEN_BYTES} bytes"),
                })
            }
            None => {
                return Err(Error::TruncatedTable(format!(
                    "entry {index} of {count}: file ends inside the token"
                )))
            }
        };
        let token = std::str::from_utf8(&rest[..token_len]).map_err(|_| Error::BadEntry {
            index,
            message: "token is not valid UTF-8".into(),
        })?;
        pos += token_len + 1;
        let available = bytes.len() - pos;
        if available < vector_bytes {
            return Err(Error::TruncatedTable(format!(
                "entry {index} of {count}: vector ends after {available} of {vector_bytes} bytes"
            )));
        }
        values.extend(
            bytes[pos..pos + vector_bytes]
                .chunks_exact(4)
                .map(|c| f64::from(LittleEndian::read_f32(c))),
        );
        pos += vector_bytes;
        words.push(token.to_owned());
    }
    build_table(words, values, dim)
}

pub fn load_word2vec_text(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_word2vec_text(&content).map_err(|e| with_path(path, e))
}

pub fn load_word2vec_binary(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_word2vec_binary(&bytes).map_err(|e| with_path(path, e))
}

/// Picks the binary reader for `.bin` files and the text reader otherwise.
pub fn load_word2vec(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    if path.extension().is_some_and(|ext| ext == "bin") {
        load_word2vec_binary(path)
    } else {
        load_word2vec_text(path)
    }
}

fn with_path(path: &Path, err: Error) -> Error {
    match err {
        Error::MalformedHeader(m) => Error::MalformedHeader(format!("{}: {m}", path.display())),
        Error::TruncatedTable(m) => Error::TruncatedTable(format!("{}: {m}", path.display())),
        Error::BadEntry { index, message } => Error::BadEntry {
            index,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

/// Values are narrowed to `f32`; `{}` prints the shortest decimal that
/// parses back to the same `f32`.
pub fn write_word2vec_text<W: Write>(table: &EmbeddingTable, w: &mut W) -> io::Result<()> {
    writeln!(w, "{} {}", table.len(), table.dim())?;
    for (i, word) in table.words().iter().enumerate() {
        write!(w, "{word}")?;
        for &v in table.vectors().row(i) {
            write!(w, " {}", v as f32)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_word2vec_binary<W: Write>(table: &EmbeddingTable, w: &mut W) -> io::Result<()> {
    writeln!(w, "{} {}", table.len(), table.dim())?;
    for (i, word) in table.words().iter().enumerate() {
        w.write_all(word.as_bytes())?;
        w.write_all(b" ")?;
        for &v in table.vectors().row(i) {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn save_with<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut io::BufWriter<fs::File>) -> io::Result<()>,
{
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = io::BufWriter::new(file);
    write(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn save_word2vec_text(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    save_with(path.as_ref(), |w| write_word2vec_text(table, w))
}

pub fn save_word2vec_binary(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    save_with(path.as_ref(), |w| write_word2vec_binary(table, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "2 3\napple 1 0 0\n香蕉 0 1 0\n";

    #[test]
    fn reads_minimal_text_fixture() {
        let table = read_word2vec_text(FIXTURE).unwrap();
        assert_eq!(table.dim(), 3);
        assert_eq!(table.len(), 2);
        assert_eq!(table.vector("apple").unwrap(), &[1.0, 0.0, 0.0]);
        assert_eq!(table.vector("香蕉").unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn text_errors() {
        assert!(matches!(
            read_word2vec_text("3 3\napple 1 0 0\n香蕉 0 1 0\n"),
            Err(Error::TruncatedTable(_))
        ));
        assert!(matches!(read_word2vec_text(""), Err(Error::MalformedHeader(_))));
        assert!(matches!(read_word2vec_text("two 3\n"), Err(Error::MalformedHeader(_))));
        assert!(matches!(
            read_word2vec_text("1 3\napple 1 0\n"),
            Err(Error::BadEntry { index: 0, .. })
        ));
        assert!(matches!(
            read_word2vec_text("2 1\na 1\nb x\n"),
            Err(Error::BadEntry { index: 1, .. })
        ));
        assert!(matches!(
            read_word2vec_text("2 1\na 1\na 2\n"),
            Err(Error::DuplicateToken { index: 1, .. })
        ));
        assert!(matches!(
            read_word2vec_text("1 1\na 1\nb 2\n"),
            Err(Error::BadEntry { index: 1, .. })
        ));
    }

    #[test]
    fn binary_matches_text() {
        let table = read_word2vec_text(FIXTURE).unwrap();
        let mut buf = Vec::new();
        write_word2vec_binary(&table, &mut buf).unwrap();
        assert!(buf.starts_with(b"2 3\napple "));
        assert_eq!(buf.len(), 4 + (6 + 12 + 1) + (7 + 12 + 1));
        assert_eq!(read_word2vec_binary(&buf).unwrap(), table);
    }

    #[test]
    fn binary_without_trailing_newlines() {
        let mut buf = b"2 1\na ".to_vec();
        buf.extend_from_slice(&1.5f32.to_le_bytes());
        buf.extend_from_slice(b"b ");
        buf.extend_from_slice(&(-2.0f32).to_le_bytes());
        let table = read_word2vec_binary(&buf).unwrap();
        assert_eq!(table.vector("b").unwrap(), &[-2.0]);
    }

    #[test]
    fn binary_errors() {
        assert!(matches!(read_word2vec_binary(b""), Err(Error::MalformedHeader(_))));

        let table = read_word2vec_text(FIXTURE).unwrap();
        let mut buf = Vec::new();
        write_word2vec_binary(&table, &mut buf).unwrap();
        let cut = &buf[..buf.len() - 6];
        match read_word2vec_binary(cut) {
            Err(Error::TruncatedTable(msg)) => assert!(msg.contains("entry 1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }

        let mut long = b"1 1\n".to_vec();
        long.extend(std::iter::repeat(b'x').take(MAX_TOKEN_BYTES + 5));
        long.extend_from_slice(b" \0\0\0\0");
        assert!(matches!(read_word2vec_binary(&long), Err(Error::BadEntry { index: 0, .. })));
    }

    #[test]
    fn text_round_trip_keeps_f32_values() {
        let words = vec!["x".to_string(), "y".to_string()];
        let vals = vec![0.1f32, -1234.5678, 3.0e-7, 1.0 / 3.0];
        let table = EmbeddingTable::new(
            words,
            Matrix::new(2, 2, vals.iter().map(|&v| f64::from(v)).collect()).unwrap(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_word2vec_text(&table, &mut buf).unwrap();
        let back = read_word2vec_text(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, table);
    }
}
