//! File ingestion for the three supported rating formats.

use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};

use super::{RatingDataset, RatingScale, RawRecord};

/// Supported on-disk formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    /// Tab-separated `user item rating timestamp` (MovieLens 100k `u.data`).
    MovieLens100k,
    /// `user::item::rating::timestamp` (MovieLens 1M `ratings.dat`).
    MovieLens1m,
    /// Header `user,item,rating[,timestamp]`.
    Csv,
}

impl Format {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ml-100k" => Ok(Self::MovieLens100k),
            "ml-1m" => Ok(Self::MovieLens1m),
            "csv" => Ok(Self::Csv),
            other => Err(Error::InvalidConfig(format!(
                "unknown format {other:?} (expected ml-100k, ml-1m, or csv)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Declared rating bounds. Defaults to [1, 5].
    pub scale: Option<RatingScale>,
    /// Dataset name; defaults to the file stem.
    pub name: Option<String>,
}

/// Parse a ratings file into a dense-indexed dataset. Ratings outside the
/// declared scale and malformed lines are reported with their line number.
pub fn load_ratings(path: &Path, format: Format, options: &LoadOptions) -> Result<RatingDataset> {
    let scale = options.scale.unwrap_or(RatingScale { min: 1.0, max: 5.0 });
    let name = options.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string())
    });
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);

    let records = match format {
        Format::MovieLens100k => parse_delimited(path, reader, '\t', false)?,
        Format::MovieLens1m => parse_ml1m(path, reader)?,
        Format::Csv => parse_csv(path, reader)?,
    };
    let ds = RatingDataset::from_records(name, records, scale)?;
    for (line0, it) in ds.interactions.iter().enumerate() {
        if !scale.contains(it.rating) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line0 + 1,
                msg: format!(
                    "rating {} outside scale [{}, {}]",
                    it.rating, scale.min, scale.max
                ),
            });
        }
    }
    Ok(ds)
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    what: &str,
    raw: &str,
) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("invalid {what}: {raw:?}"),
    })
}

fn parse_delimited(
    path: &Path,
    reader: impl BufRead,
    delim: char,
    _header: bool,
) -> Result<Vec<RawRecord>> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(delim).collect();
        if fields.len() < 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("expected at least 3 fields, got {}", fields.len()),
            });
        }
        let rating: f64 = parse_field(path, line_no, "rating", fields[2])?;
        let timestamp: Option<i64> = match fields.get(3) {
            Some(raw) if !raw.trim().is_empty() => {
                Some(parse_field(path, line_no, "timestamp", raw)?)
            }
            _ => None,
        };
        records.push(RawRecord {
            user: fields[0].trim().to_string(),
            item: fields[1].trim().to_string(),
            rating,
            timestamp,
        });
    }
    Ok(records)
}

fn parse_ml1m(path: &Path, reader: impl BufRead) -> Result<Vec<RawRecord>> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() < 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("expected at least 3 '::' fields, got {}", fields.len()),
            });
        }
        let rating: f64 = parse_field(path, line_no, "rating", fields[2])?;
        let timestamp: Option<i64> = match fields.get(3) {
            Some(raw) if !raw.trim().is_empty() => {
                Some(parse_field(path, line_no, "timestamp", raw)?)
            }
            _ => None,
        };
        records.push(RawRecord {
            user: fields[0].trim().to_string(),
            item: fields[1].trim().to_string(),
            rating,
            timestamp,
        });
    }
    Ok(records)
}

fn parse_csv(path: &Path, reader: impl BufRead) -> Result<Vec<RawRecord>> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv_reader
        .headers()
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("bad csv header: {e}"),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (u_col, i_col, r_col) = match (col("user"), col("item"), col("rating")) {
        (Some(u), Some(i), Some(r)) => (u, i, r),
        _ => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("csv header must contain user,item,rating (got {headers:?})"),
            })
        }
    };
    let t_col = col("timestamp");

    let mut records = Vec::new();
    for row in csv_reader.into_records() {
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or(0),
            msg: format!("bad csv row: {e}"),
        })?;
        let line_no = row
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(0);
        let get = |c: usize, what: &str| -> Result<&str> {
            row.get(c).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("missing {what} column"),
            })
        };
        let rating: f64 = parse_field(path, line_no, "rating", get(r_col, "rating")?)?;
        let timestamp = match t_col.and_then(|c| row.get(c)) {
            Some(raw) if !raw.trim().is_empty() => {
                Some(parse_field(path, line_no, "timestamp", raw)?)
            }
            _ => None,
        };
        records.push(RawRecord {
            user: get(u_col, "user")?.to_string(),
            item: get(i_col, "item")?.to_string(),
            rating,
            timestamp,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_tab_separated() {
        let f = write_tmp("196\t242\t3\t881250949\n186\t302\t3\t891717742\n", ".data");
        let ds = load_ratings(f.path(), Format::MovieLens100k, &LoadOptions::default()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_users, 2);
        assert_eq!(ds.interactions[0].timestamp, 881250949);
        assert_eq!(ds.user_labels[0], "196");
    }

    #[test]
    fn parses_double_colon() {
        let f = write_tmp("1::1193::5::978300760\n1::661::3::978302109\n", ".dat");
        let ds = load_ratings(f.path(), Format::MovieLens1m, &LoadOptions::default()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_users, 1);
        assert_eq!(ds.num_items, 2);
    }

    #[test]
    fn parses_csv_with_and_without_timestamp() {
        let f = write_tmp("user,item,rating,timestamp\na,x,4.0,100\nb,y,2.5,200\n", ".csv");
        let ds = load_ratings(f.path(), Format::Csv, &LoadOptions::default()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.interactions[1].rating, 2.5);

        let f2 = write_tmp("user,item,rating\na,x,4.0\nb,y,2.0\nc,z,1.0\n", ".csv");
        let ds2 = load_ratings(f2.path(), Format::Csv, &LoadOptions::default()).unwrap();
        // Timestamps fall back to file order.
        assert_eq!(ds2.interactions[2].timestamp, 2);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_tmp("196\t242\t3\t881250949\n186\tnot-a-number\n", ".data");
        let err = load_ratings(f.path(), Format::MovieLens100k, &LoadOptions::default());
        match err {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_scale_rating_rejected() {
        let f = write_tmp("1\t2\t7\t100\n", ".data");
        let err = load_ratings(f.path(), Format::MovieLens100k, &LoadOptions::default());
        assert!(err.is_err());
    }

    #[test]
    fn csv_round_trip_preserves_content() {
        let dir = tempfile::tempdir().unwrap();
        let ds = super::super::synthetic::toy(12, 10, 70, 3);
        let path = dir.path().join("out.csv");
        ds.export_csv(&path).unwrap();
        let back = load_ratings(&path, Format::Csv, &LoadOptions::default()).unwrap();

        // Label-level content is identical (ids may be renumbered by
        // first-appearance densification).
        let key = |d: &RatingDataset| {
            let mut rows: Vec<(String, String, u64, i64)> = d
                .interactions
                .iter()
                .map(|it| {
                    (
                        d.user_labels[it.user as usize].clone(),
                        d.item_labels[it.item as usize].clone(),
                        it.rating.to_bits(),
                        it.timestamp,
                    )
                })
                .collect();
            rows.sort();
            rows
        };
        assert_eq!(key(&ds), key(&back));

        // A second round trip is exactly stable, fingerprint included.
        let path2 = dir.path().join("out2.csv");
        back.export_csv(&path2).unwrap();
        let back2 = load_ratings(&path2, Format::Csv, &LoadOptions::default()).unwrap();
        assert_eq!(back.fingerprint(), back2.fingerprint());
    }
}
