//! Matrix and vector ingestion from delimited text or MatrixMarket files,
//! detected by header, plus text output helpers.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{AirError, Result};

pub fn display(path: &Path) -> String {
    path.display().to_string()
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| AirError::Io {
        path: display(path),
        source,
    })
}

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|source| AirError::Io {
        path: display(path),
        source,
    })
}

/// Read a dense matrix; a `%%MatrixMarket` header selects that format,
/// anything else is parsed as delimited rows of numbers.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = read_to_string(path)?;
    if text.trim_start().starts_with("%%MatrixMarket") {
        parse_matrix_market(&text, &display(path))
    } else {
        parse_delimited(&text, &display(path))
    }
}

/// Read a vector: a single-column or single-row matrix in either format.
pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let matrix = read_matrix(path)?;
    if matrix.ncols() == 1 {
        Ok(DVector::from_column_slice(matrix.column(0).as_slice()))
    } else if matrix.nrows() == 1 {
        Ok(matrix.transpose().column(0).into_owned())
    } else {
        Err(AirError::Parse {
            path: display(path),
            line: 1,
            message: format!(
                "expected a vector but found a {}x{} matrix",
                matrix.nrows(),
                matrix.ncols()
            ),
        })
    }
}

fn parse_err(path: &str, line: usize, message: String) -> AirError {
    AirError::Parse {
        path: path.to_string(),
        line,
        message,
    }
}

fn parse_delimited(text: &str, path: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line_no = index + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for token in line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
        {
            let value: f64 = token
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("`{token}` is not a number")))?;
            row.push(value);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    path,
                    line_no,
                    format!(
                        "row has {} entries but previous rows have {}",
                        row.len(),
                        first.len()
                    ),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "file holds no numeric data".into()));
    }
    let nrows = rows.len();
    let ncols = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

fn parse_matrix_market(text: &str, path: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file".into()))?;
    let tokens: Vec<String> = header
        .split_whitespace()
        .map(|t| t.to_ascii_lowercase())
        .collect();
    if tokens.len() < 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(path, 1, "malformed MatrixMarket header".into()));
    }
    let format = tokens[2].as_str();
    let field = tokens[3].as_str();
    let symmetry = tokens[4].as_str();
    if !matches!(format, "coordinate" | "array") {
        return Err(parse_err(
            path,
            1,
            format!("unsupported MatrixMarket format `{format}`"),
        ));
    }
    if !matches!(field, "real" | "integer" | "double") {
        return Err(parse_err(
            path,
            1,
            format!("unsupported MatrixMarket field `{field}`"),
        ));
    }
    if !matches!(symmetry, "general" | "symmetric") {
        return Err(parse_err(
            path,
            1,
            format!("unsupported MatrixMarket symmetry `{symmetry}`"),
        ));
    }

    let mut data_lines = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (size_index, size_line) = data_lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "missing size line".into()))?;
    let size_no = size_index + 1;
    let dims: Vec<usize> = size_line
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| parse_err(path, size_no, format!("`{t}` is not a size")))
        })
        .collect::<Result<_>>()?;

    match format {
        "coordinate" => {
            if dims.len() != 3 {
                return Err(parse_err(
                    path,
                    size_no,
                    "coordinate size line must be `rows cols nnz`".into(),
                ));
            }
            let (nrows, ncols, nnz) = (dims[0], dims[1], dims[2]);
            let mut matrix = DMatrix::zeros(nrows, ncols);
            let mut seen = 0usize;
            for (index, line) in data_lines {
                let line_no = index + 1;
                let parts: Vec<&str> = line.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(parse_err(
                        path,
                        line_no,
                        "coordinate entry must be `row col value`".into(),
                    ));
                }
                let i: usize = parts[0].parse().map_err(|_| {
                    parse_err(path, line_no, format!("`{}` is not a row index", parts[0]))
                })?;
                let j: usize = parts[1].parse().map_err(|_| {
                    parse_err(
                        path,
                        line_no,
                        format!("`{}` is not a column index", parts[1]),
                    )
                })?;
                let v: f64 = parts[2].parse().map_err(|_| {
                    parse_err(path, line_no, format!("`{}` is not a number", parts[2]))
                })?;
                if i == 0 || i > nrows || j == 0 || j > ncols {
                    return Err(parse_err(
                        path,
                        line_no,
                        format!("entry ({i}, {j}) is outside a {nrows}x{ncols} matrix"),
                    ));
                }
                matrix[(i - 1, j - 1)] = v;
                if symmetry == "symmetric" {
                    matrix[(j - 1, i - 1)] = v;
                }
                seen += 1;
            }
            if seen != nnz {
                return Err(parse_err(
                    path,
                    size_no,
                    format!("size line promises {nnz} entries but the file holds {seen}"),
                ));
            }
            Ok(matrix)
        }
        _ => {
            if dims.len() != 2 {
                return Err(parse_err(
                    path,
                    size_no,
                    "array size line must be `rows cols`".into(),
                ));
            }
            let (nrows, ncols) = (dims[0], dims[1]);
            let mut values = Vec::with_capacity(nrows * ncols);
            for (index, line) in data_lines {
                let line_no = index + 1;
                for token in line.split_whitespace() {
                    let v: f64 = token.parse().map_err(|_| {
                        parse_err(path, line_no, format!("`{token}` is not a number"))
                    })?;
                    values.push(v);
                }
            }
            if values.len() != nrows * ncols {
                return Err(parse_err(
                    path,
                    size_no,
                    format!(
                        "array of {}x{} needs {} values but the file holds {}",
                        nrows,
                        ncols,
                        nrows * ncols,
                        values.len()
                    ),
                ));
            }
            if symmetry == "symmetric" {
                return Err(parse_err(
                    path,
                    1,
                    "symmetric array files are not supported".into(),
                ));
            }
            Ok(DMatrix::from_column_slice(nrows, ncols, &values))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::NamedTempFile;

    fn file_with(content: &str) -> NamedTempFile {
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn delimited_matrix_reads_rows() {
        let f = file_with("1 2 3\n4,5,6\n# comment\n7 8 9\n");
        let m = read_matrix(f.path()).unwrap();
        assert_eq!(m.nrows(), 3);
        assert_eq!(m[(1, 2)], 6.0);
        assert_eq!(m[(2, 0)], 7.0);
    }

    #[test]
    fn delimited_rejects_ragged_rows() {
        let f = file_with("1 2\n3\n");
        let err = read_matrix(f.path()).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn matrix_market_coordinate_reads() {
        let f = file_with(
            "%%MatrixMarket matrix coordinate real general\n% comment\n2 3 2\n1 2 5.0\n2 3 -1.5\n",
        );
        let m = read_matrix(f.path()).unwrap();
        assert_eq!(m.nrows(), 2);
        assert_eq!(m.ncols(), 3);
        assert_eq!(m[(0, 1)], 5.0);
        assert_eq!(m[(1, 2)], -1.5);
        assert_eq!(m[(0, 0)], 0.0);
    }

    #[test]
    fn matrix_market_array_is_column_major() {
        let f = file_with("%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n");
        let m = read_matrix(f.path()).unwrap();
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(1, 0)], 2.0);
        assert_eq!(m[(0, 1)], 3.0);
        assert_eq!(m[(1, 1)], 4.0);
    }

    #[test]
    fn matrix_market_symmetric_mirrors_entries() {
        let f =
            file_with("%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 2.0\n2 1 3.0\n");
        let m = read_matrix(f.path()).unwrap();
        assert_eq!(m[(0, 1)], 3.0);
        assert_eq!(m[(1, 0)], 3.0);
    }

    #[test]
    fn vectors_read_from_column_or_row() {
        let col = file_with("1\n2\n3\n");
        assert_eq!(read_vector(col.path()).unwrap().len(), 3);
        let row = file_with("1 2 3\n");
        let v = read_vector(row.path()).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v[2], 3.0);
        let square = file_with("1 2\n3 4\n");
        assert!(read_vector(square.path()).is_err());
    }

    #[test]
    fn nnz_mismatch_is_reported() {
        let f = file_with("%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1.0\n");
        let err = read_matrix(f.path()).unwrap_err();
        assert!(err.to_string().contains("promises 3"));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = read_matrix(Path::new("/nonexistent/data.txt")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
