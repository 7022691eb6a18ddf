//! Readers and writers for the on-disk formats: LIBSVM, MatrixMarket, dense CSV, binary PGM.
//!
//! Every parser reports the 1-based line of the first malformed record. Vectors
//! and matrices are exchanged as row-major CSV; images are column-major in memory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{CsrMatrix, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    Libsvm,
    MatrixMarket,
    Csv,
    Pgm,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "libsvm" | "svm" => Ok(DataFormat::Libsvm),
            "matrixmarket" | "matrix-market" | "mtx" => Ok(DataFormat::MatrixMarket),
            "csv" => Ok(DataFormat::Csv),
            "pgm" => Ok(DataFormat::Pgm),
            other => Err(Error::param(format!(
                "unknown data format '{other}' (expected libsvm, matrixmarket, csv or pgm)"
            ))),
        }
    }
}

impl DataFormat {
    /// Guess from the file extension.
    pub fn from_extension(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "svm" | "libsvm" => Some(DataFormat::Libsvm),
            "mtx" => Some(DataFormat::MatrixMarket),
            "csv" => Some(DataFormat::Csv),
            "pgm" => Some(DataFormat::Pgm),
            _ => None,
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_f64(path: &Path, line: usize, token: &str) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| parse_err(path, line, format!("'{token}' is not a number")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(parse_err(path, line, format!("non-finite value '{token}'")))
    }
}

fn parse_usize(path: &Path, line: usize, token: &str) -> Result<usize> {
    token
        .parse()
        .map_err(|_| parse_err(path, line, format!("'{token}' is not a nonnegative integer")))
}

/// Labelled sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LibsvmData {
    pub labels: Vec<f64>,
    pub matrix: CsrMatrix,
}

pub fn read_libsvm(path: &Path, n_features: Option<usize>) -> Result<LibsvmData> {
    parse_libsvm(&read_text(path)?, path, n_features)
}

/// `label idx:value …` per line with 1-based indices. Blank lines and `#` comments are skipped.
/// Without `n_features` the width is the largest index seen.
pub fn parse_libsvm(text: &str, path: &Path, n_features: Option<usize>) -> Result<LibsvmData> {
    let mut labels = Vec::new();
    let mut triplets = Vec::new();
    let mut width = 0usize;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label = parse_f64(path, line, tokens.next().expect("nonempty line"))?;
        let row = labels.len();
        labels.push(label);
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(path, line, format!("expected index:value, got '{tok}'")))?;
            let idx = parse_usize(path, line, idx)?;
            if idx == 0 {
                return Err(parse_err(path, line, "feature indices are 1-based"));
            }
            if let Some(n) = n_features {
                if idx > n {
                    return Err(parse_err(
                        path,
                        line,
                        format!("feature index {idx} exceeds declared width {n}"),
                    ));
                }
            }
            width = width.max(idx);
            triplets.push((row, idx - 1, parse_f64(path, line, val)?));
        }
    }
    let cols = n_features.unwrap_or(width);
    let matrix = CsrMatrix::from_triplets(labels.len(), cols, triplets)?;
    Ok(LibsvmData { labels, matrix })
}

/// Sparse matrix as `(row, col, value)` with 0-based indices.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixMarket {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl MatrixMarket {
    pub fn to_operator(&self) -> Result<LinearOperator> {
        Ok(LinearOperator::sparse(CsrMatrix::from_triplets(
            self.rows,
            self.cols,
            self.entries.iter().copied(),
        )?))
    }

    /// Row-major dense copy; duplicates are summed.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut data = vec![0.0; self.rows * self.cols];
        for &(r, c, v) in &self.entries {
            data[r * self.cols + c] += v;
        }
        data
    }
}

pub fn read_matrix_market(path: &Path) -> Result<MatrixMarket> {
    parse_matrix_market(&read_text(path)?, path)
}

#[derive(Clone, Copy, PartialEq)]
enum Symmetry {
    General,
    Symmetric,
    Skew,
}

/// Coordinate (`real`, `integer`, `pattern`) or array (`real`, `integer`) matrices with
/// `general`, `symmetric` or `skew-symmetric` storage.
pub fn parse_matrix_market(text: &str, path: &Path) -> Result<MatrixMarket> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, banner) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let banner: Vec<String> = banner.split_whitespace().map(str::to_ascii_lowercase).collect();
    if banner.len() != 5 || banner[0] != "%%matrixmarket" || banner[1] != "matrix" {
        return Err(parse_err(path, 1, "expected '%%MatrixMarket matrix <format> <field> <symmetry>'"));
    }
    let coordinate = match banner[2].as_str() {
        "coordinate" => true,
        "array" => false,
        other => return Err(parse_err(path, 1, format!("unsupported format '{other}'"))),
    };
    let pattern = match banner[3].as_str() {
        "real" | "integer" | "double" => false,
        "pattern" if coordinate => true,
        other => return Err(parse_err(path, 1, format!("unsupported field '{other}'"))),
    };
    let symmetry = match banner[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::Skew,
        other => return Err(parse_err(path, 1, format!("unsupported symmetry '{other}'"))),
    };
    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (size_line, size) = body.next().ok_or_else(|| parse_err(path, 1, "missing size line"))?;
    let dims: Vec<&str> = size.split_whitespace().collect();
    let expected = if coordinate { 3 } else { 2 };
    if dims.len() != expected {
        return Err(parse_err(path, size_line, format!("size line needs {expected} integers")));
    }
    let rows = parse_usize(path, size_line, dims[0])?;
    let cols = parse_usize(path, size_line, dims[1])?;
    if symmetry != Symmetry::General && rows != cols {
        return Err(parse_err(path, size_line, "symmetric storage needs a square matrix"));
    }
    let mut entries = Vec::new();
    let mirror = |entries: &mut Vec<(usize, usize, f64)>, r: usize, c: usize, v: f64| {
        entries.push((r, c, v));
        if r != c {
            match symmetry {
                Symmetry::General => {}
                Symmetry::Symmetric => entries.push((c, r, v)),
                Symmetry::Skew => entries.push((c, r, -v)),
            }
        }
    };
    if coordinate {
        let nnz = parse_usize(path, size_line, dims[2])?;
        let mut seen = 0;
        for (line, l) in body {
            let t: Vec<&str> = l.split_whitespace().collect();
            let want = if pattern { 2 } else { 3 };
            if t.len() != want {
                return Err(parse_err(path, line, format!("expected {want} fields")));
            }
            let r = parse_usize(path, line, t[0])?;
            let c = parse_usize(path, line, t[1])?;
            if r == 0 || c == 0 || r > rows || c > cols {
                return Err(parse_err(path, line, format!("entry ({r}, {c}) outside {rows}x{cols}")));
            }
            let v = if pattern { 1.0 } else { parse_f64(path, line, t[2])? };
            mirror(&mut entries, r - 1, c - 1, v);
            seen += 1;
        }
        if seen != nnz {
            return Err(parse_err(path, size_line, format!("declared {nnz} entries, found {seen}")));
        }
    } else {
        // Column-major; symmetric storage lists the lower triangle only.
        let mut slots = Vec::new();
        for c in 0..cols {
            let start = if symmetry == Symmetry::General { 0 } else { c };
            let start = if symmetry == Symmetry::Skew { c + 1 } else { start };
            slots.extend((start..rows).map(|r| (r, c)));
        }
        let mut slot = slots.into_iter();
        for (line, l) in body {
            for tok in l.split_whitespace() {
                let (r, c) = slot
                    .next()
                    .ok_or_else(|| parse_err(path, line, "more values than the declared size"))?;
                let v = parse_f64(path, line, tok)?;
                if v != 0.0 {
                    mirror(&mut entries, r, c, v);
                }
            }
        }
        if slot.next().is_some() {
            return Err(parse_err(path, text.lines().count(), "fewer values than the declared size"));
        }
    }
    Ok(MatrixMarket { rows, cols, entries })
}

pub fn write_matrix_market(path: &Path, m: &MatrixMarket) -> Result<()> {
    let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(out, "{} {} {}", m.rows, m.cols, m.entries.len());
    for &(r, c, v) in &m.entries {
        let _ = writeln!(out, "{} {} {v:e}", r + 1, c + 1);
    }
    write_bytes(path, out.as_bytes())
}

/// Row-major dense table.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTable {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseTable {
    pub fn to_operator(&self) -> Result<LinearOperator> {
        LinearOperator::dense(self.rows, self.cols, self.data.clone())
    }

    /// The single column or single row as a vector.
    pub fn to_vector(&self, path: &Path) -> Result<Vec<f64>> {
        if self.rows == 1 || self.cols == 1 {
            Ok(self.data.clone())
        } else {
            Err(parse_err(
                path,
                1,
                format!("expected a vector, found a {}x{} table", self.rows, self.cols),
            ))
        }
    }
}

pub fn read_csv(path: &Path) -> Result<DenseTable> {
    parse_csv(&read_text(path)?, path)
}

/// Comma-separated numbers, one row per line; blank lines and `#` lines are skipped.
pub fn parse_csv(text: &str, path: &Path) -> Result<DenseTable> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let before = data.len();
        for tok in t.split(',') {
            data.push(parse_f64(path, line, tok.trim())?);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(parse_err(path, line, format!("row has {width} fields, expected {c}")));
            }
            _ => {}
        }
        rows += 1;
    }
    Ok(DenseTable {
        rows,
        cols: cols.unwrap_or(0),
        data,
    })
}

/// Writes with full round-trip precision.
pub fn write_csv(path: &Path, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    if data.len() != rows * cols {
        return Err(Error::dims("csv table", rows * cols, data.len()));
    }
    let mut out = String::with_capacity(data.len() * 24);
    for r in 0..rows {
        for c in 0..cols {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{:?}", data[r * cols + c]);
        }
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    write_csv(path, v.len(), 1, v)
}

/// Grayscale image with intensities in `[0, 1]`, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims("image data", rows * cols, data.len()));
        }
        Ok(Image { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[c * self.rows + r]
    }
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_pgm(&bytes, path)
}

/// Binary `P5` with `maxval ≤ 255`; pixel values are divided by `maxval`.
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<Image> {
    let mut pos = 0;
    let mut line = 1;
    let mut header = Vec::new();
    while header.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            if bytes[pos] == b'\n' {
                line += 1;
            }
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(path, line, "truncated header"));
        }
        header.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if header[0] != "P5" {
        return Err(parse_err(path, 1, format!("expected binary PGM 'P5', found '{}'", header[0])));
    }
    let cols = parse_usize(path, line, &header[1])?;
    let rows = parse_usize(path, line, &header[2])?;
    let maxval = parse_usize(path, line, &header[3])?;
    if maxval == 0 || maxval > 255 {
        return Err(parse_err(path, line, format!("maxval {maxval} is not an 8-bit depth")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let raster = bytes.get(pos..pos + rows * cols).ok_or_else(|| {
        parse_err(path, line, format!("raster shorter than {rows}x{cols} pixels"))
    })?;
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            data[c * rows + r] = f64::from(raster[r * cols + c]) / maxval as f64;
        }
    }
    Ok(Image { rows, cols, data })
}

/// Clamps to `[0, 1]` and quantizes to 8 bits.
pub fn write_pgm(path: &Path, image: &Image) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", image.cols, image.rows).into_bytes();
    for r in 0..image.rows {
        for c in 0..image.cols {
            out.push((image.get(r, c).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    write_bytes(path, &out)
}

/// Parsed contents of one data file.
#[derive(Debug, Clone, PartialEq)]
pub enum DataBundle {
    Libsvm(LibsvmData),
    MatrixMarket(MatrixMarket),
    Csv(DenseTable),
    Pgm(Image),
}

impl DataBundle {
    /// `(rows, cols)` of the matrix or image.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            DataBundle::Libsvm(d) => (d.matrix.rows(), d.matrix.cols()),
            DataBundle::MatrixMarket(m) => (m.rows, m.cols),
            DataBundle::Csv(t) => (t.rows, t.cols),
            DataBundle::Pgm(i) => (i.rows, i.cols),
        }
    }
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<DataBundle> {
    Ok(match format {
        DataFormat::Libsvm => DataBundle::Libsvm(read_libsvm(path, None)?),
        DataFormat::MatrixMarket => DataBundle::MatrixMarket(read_matrix_market(path)?),
        DataFormat::Csv => DataBundle::Csv(read_csv(path)?),
        DataFormat::Pgm => DataBundle::Pgm(read_pgm(path)?),
    })
}

/// Resolves `file` against `base` unless it is absolute.
pub fn resolve(base: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn here() -> &'static Path {
        Path::new("inline")
    }

    fn line_of(e: Error) -> usize {
        match e {
            Error::Parse { line, .. } => line,
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn libsvm_single_entry() {
        let d = parse_libsvm("+1 3:0.5\n", here(), Some(4)).unwrap();
        assert_eq!(d.labels, vec![1.0]);
        let op = LinearOperator::sparse(d.matrix);
        assert_eq!(op.to_dense().row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn libsvm_errors_carry_lines() {
        assert_eq!(line_of(parse_libsvm("1 1:2\n-1 x:1\n", here(), None).unwrap_err()), 2);
        assert_eq!(line_of(parse_libsvm("1 0:2\n", here(), None).unwrap_err()), 1);
        assert_eq!(line_of(parse_libsvm("1 1:2\n\n-1 5:1\n", here(), Some(4)).unwrap_err()), 3);
        assert_eq!(line_of(parse_libsvm("1 2\n", here(), None).unwrap_err()), 1);
    }

    #[test]
    fn libsvm_width_from_data() {
        let d = parse_libsvm("# header\n-1 2:1 7:3\n1\n", here(), None).unwrap();
        assert_eq!((d.matrix.rows(), d.matrix.cols()), (2, 7));
        assert_eq!(d.labels, vec![-1.0, 1.0]);
    }

    #[test]
    fn matrix_market_identity() {
        let text = "%%MatrixMarket matrix coordinate real general\n% c\n2 2 2\n1 1 1\n2 2 1\n";
        let op = parse_matrix_market(text, here()).unwrap().to_operator().unwrap();
        for probe in [[1.0, 0.0], [0.3, -2.0], [5.0, 7.0]] {
            assert_eq!(op.apply(&probe).unwrap(), probe.to_vec());
        }
    }

    #[test]
    fn matrix_market_symmetric_and_array() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 4\n2 1 1\n";
        let m = parse_matrix_market(text, here()).unwrap();
        assert_eq!(m.to_dense(), vec![4.0, 1.0, 1.0, 0.0]);
        let text = "%%MatrixMarket matrix array real general\n2 3\n1\n2\n3\n4\n5\n6\n";
        let m = parse_matrix_market(text, here()).unwrap();
        assert_eq!(m.to_dense(), vec![1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
        let text = "%%MatrixMarket matrix coordinate pattern general\n2 2 1\n1 2\n";
        assert_eq!(parse_matrix_market(text, here()).unwrap().to_dense(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn matrix_market_errors() {
        let bad_entry = "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1\n";
        assert_eq!(line_of(parse_matrix_market(bad_entry, here()).unwrap_err()), 3);
        let count = "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n";
        assert_eq!(line_of(parse_matrix_market(count, here()).unwrap_err()), 2);
        assert!(parse_matrix_market("hello\n", here()).is_err());
        let short = "%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n";
        assert!(parse_matrix_market(short, here()).is_err());
    }

    #[test]
    fn csv_parse_and_errors() {
        let t = parse_csv("1, 2\n# note\n3,4\n\n", here()).unwrap();
        assert_eq!((t.rows, t.cols, t.data.clone()), (2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        assert!(t.to_vector(here()).is_err());
        assert_eq!(line_of(parse_csv("1,2\n3\n", here()).unwrap_err()), 2);
        assert_eq!(line_of(parse_csv("1,a\n", here()).unwrap_err()), 1);
        assert_eq!(line_of(parse_csv("nan\n", here()).unwrap_err()), 1);
    }

    #[test]
    fn pgm_white_square_is_one() {
        let mut bytes = b"P5\n# comment\n16 16\n255\n".to_vec();
        bytes.extend(std::iter::repeat_n(255u8, 256));
        let img = parse_pgm(&bytes, here()).unwrap();
        assert_eq!((img.rows, img.cols), (16, 16));
        assert!(img.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pgm_orientation_and_errors() {
        let mut bytes = b"P5 3 2 255\n".to_vec();
        bytes.extend([0u8, 51, 102, 153, 204, 255]);
        let img = parse_pgm(&bytes, here()).unwrap();
        assert_eq!((img.rows, img.cols), (2, 3));
        assert_eq!(img.get(0, 1), 0.2);
        assert_eq!(img.get(1, 0), 0.6);
        assert!(parse_pgm(b"P2 1 1 255\n0", here()).is_err());
        assert!(parse_pgm(b"P5 2 2 255\n\x00", here()).is_err());
        assert!(parse_pgm(b"P5 1 1 65535\n\x00\x00", here()).is_err());
    }

    #[test]
    fn round_trips_through_files() {
        let dir = std::env::temp_dir().join(format!("fbe-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let v = vec![0.1, -1.0 / 3.0, 1e-300];
        write_vector(&dir.join("v.csv"), &v).unwrap();
        assert_eq!(read_csv(&dir.join("v.csv")).unwrap().data, v);

        let m = MatrixMarket {
            rows: 2,
            cols: 3,
            entries: vec![(0, 2, 1.5), (1, 0, -2.0)],
        };
        write_matrix_market(&dir.join("m.mtx"), &m).unwrap();
        assert_eq!(read_matrix_market(&dir.join("m.mtx")).unwrap(), m);

        let img = Image::new(2, 2, vec![0.0, 1.0, 0.2, 0.6]).unwrap();
        write_pgm(&dir.join("i.pgm"), &img).unwrap();
        assert_eq!(read_pgm(&dir.join("i.pgm")).unwrap(), img);

        let missing = load_dataset(&dir.join("absent.svm"), DataFormat::Libsvm);
        assert!(matches!(missing, Err(Error::Io { .. })));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn format_names() {
        assert_eq!("LIBSVM".parse::<DataFormat>().unwrap(), DataFormat::Libsvm);
        assert_eq!(DataFormat::from_extension(Path::new("a/b.mtx")), Some(DataFormat::MatrixMarket));
        assert!("hdf5".parse::<DataFormat>().is_err());
    }
}
