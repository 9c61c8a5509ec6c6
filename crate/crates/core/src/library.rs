//! Library files: `feature-csv` (`id,target,f0,...`) and
//! `fingerprint-hex-csv` (`id,target,fp_hex`).
//!
//! Lines starting with `#` before the header are kept as metadata. A
//! `n=<count>` token in such a line declares the row count, which the
//! loader checks. Writing a loaded library back out reproduces a canonical
//! file byte for byte.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{FeatureKind, FeatureMatrix, Library, ObjectiveSense};

pub const FINGERPRINT_BITS: usize = 512;
const FINGERPRINT_HEX_CHARS: usize = FINGERPRINT_BITS / 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LibraryFormat {
    FeatureCsv,
    FingerprintHexCsv,
}

impl std::str::FromStr for LibraryFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature-csv" => Ok(LibraryFormat::FeatureCsv),
            "fingerprint-hex-csv" => Ok(LibraryFormat::FingerprintHexCsv),
            other => Err(Error::InvalidConfig(format!("unknown library format `{other}`"))),
        }
    }
}

impl std::fmt::Display for LibraryFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LibraryFormat::FeatureCsv => "feature-csv",
            LibraryFormat::FingerprintHexCsv => "fingerprint-hex-csv",
        })
    }
}

pub fn load_library(path: impl AsRef<Path>, format: LibraryFormat, sense: ObjectiveSense) -> Result<Library> {
    let file = std::fs::File::open(path.as_ref())?;
    read_library(file, format, sense)
}

pub fn read_library<R: Read>(reader: R, format: LibraryFormat, sense: ObjectiveSense) -> Result<Library> {
    let reader = BufReader::new(reader);
    let mut metadata = Vec::new();
    let mut header: Option<(usize, String)> = None;
    let mut ids = Vec::new();
    let mut targets = Vec::new();
    let mut feats: Vec<f64> = Vec::new();
    let mut dim: Option<usize> = None;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if header.is_none() {
            if line.starts_with('#') {
                metadata.push(line.to_string());
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            header = Some((lineno, line.to_string()));
            dim = Some(check_header(line, lineno, format)?);
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or_default();
        if id.is_empty() {
            return Err(parse_err(lineno, "empty id"));
        }
        let target = parse_f64(fields.next(), lineno, "target")?;
        let rest: Vec<&str> = fields.collect();
        match format {
            LibraryFormat::FeatureCsv => {
                let d = dim.unwrap_or(0);
                if rest.len() != d {
                    return Err(parse_err(
                        lineno,
                        format!("expected {d} feature values, found {}", rest.len()),
                    ));
                }
                for (j, field) in rest.iter().enumerate() {
                    feats.push(parse_f64(Some(field), lineno, &format!("f{j}"))?);
                }
            }
            LibraryFormat::FingerprintHexCsv => {
                if rest.len() != 1 {
                    return Err(parse_err(lineno, format!("expected 1 fingerprint field, found {}", rest.len())));
                }
                let bits = hex_to_bits(rest[0]).map_err(|m| parse_err(lineno, m))?;
                feats.extend(bits);
            }
        }
        ids.push(id.to_string());
        targets.push(target);
    }

    let Some((_, _)) = header else {
        return Err(Error::EmptyLibrary);
    };
    if ids.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    if let Some(declared) = declared_count(&metadata)? {
        if declared != ids.len() {
            return Err(Error::DeclaredCount { declared, found: ids.len() });
        }
    }
    let d = dim.unwrap_or(0);
    let n = ids.len();
    let matrix = FeatureMatrix::new(n, d, feats)?;
    let kind = match format {
        LibraryFormat::FeatureCsv => FeatureKind::Dense,
        LibraryFormat::FingerprintHexCsv => FeatureKind::Fingerprint,
    };
    Ok(Library::new(ids, matrix, targets, sense, kind, true)?.with_metadata(metadata))
}

fn check_header(line: &str, lineno: usize, format: LibraryFormat) -> Result<usize> {
    let cols: Vec<&str> = line.split(',').collect();
    if cols.len() < 3 || cols[0] != "id" || cols[1] != "target" {
        return Err(parse_err(lineno, "header must start with `id,target`"));
    }
    match format {
        LibraryFormat::FeatureCsv => {
            for (j, c) in cols[2..].iter().enumerate() {
                if *c != format!("f{j}") {
                    return Err(parse_err(lineno, format!("expected column `f{j}`, found `{c}`")));
                }
            }
            Ok(cols.len() - 2)
        }
        LibraryFormat::FingerprintHexCsv => {
            if cols.len() != 3 || cols[2] != "fp_hex" {
                return Err(parse_err(lineno, "fingerprint header must be `id,target,fp_hex`"));
            }
            Ok(FINGERPRINT_BITS)
        }
    }
}

fn declared_count(metadata: &[String]) -> Result<Option<usize>> {
    for line in metadata {
        for tok in line.trim_start_matches('#').split_whitespace() {
            if let Some(v) = tok.strip_prefix("n=") {
                let n = v
                    .parse()
                    .map_err(|_| Error::Parse { line: 0, message: format!("bad declared count `{v}`") })?;
                return Ok(Some(n));
            }
        }
    }
    Ok(None)
}

fn parse_f64(field: Option<&str>, line: usize, what: &str) -> Result<f64> {
    let field = field.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    let v: f64 = field.trim().parse().map_err(|_| parse_err(line, format!("cannot parse {what} `{field}`")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite {what}")));
    }
    Ok(v)
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Expands a 128-character hex string into 512 bits, most significant bit
/// of each nibble first.
pub fn hex_to_bits(hex: &str) -> std::result::Result<Vec<f64>, String> {
    let hex = hex.trim();
    if hex.len() != FINGERPRINT_HEX_CHARS {
        return Err(format!("fingerprint must have {FINGERPRINT_HEX_CHARS} hex characters, found {}", hex.len()));
    }
    let mut bits = Vec::with_capacity(FINGERPRINT_BITS);
    for c in hex.chars() {
        let nibble = c.to_digit(16).ok_or_else(|| format!("invalid hex character `{c}`"))?;
        for k in (0..4).rev() {
            bits.push(f64::from((nibble >> k) & 1));
        }
    }
    Ok(bits)
}

pub fn bits_to_hex(bits: &[f64]) -> String {
    bits.chunks(4)
        .map(|nib| {
            let v = nib.iter().fold(0u32, |acc, b| (acc << 1) | u32::from(*b != 0.0));
            std::char::from_digit(v, 16).unwrap_or('0').to_ascii_uppercase()
        })
        .collect()
}

/// Writes the canonical CSV form of a library.
pub fn write_library<W: Write>(lib: &Library, mut out: W) -> Result<()> {
    let mut buf = String::new();
    for m in lib.metadata() {
        buf.push_str(m);
        buf.push('\n');
    }
    let raw = lib.raw_features();
    match lib.kind() {
        FeatureKind::Dense => {
            buf.push_str("id,target");
            for j in 0..raw.dim() {
                let _ = write!(buf, ",f{j}");
            }
            buf.push('\n');
            for i in 0..lib.len() {
                let _ = write!(buf, "{},{}", lib.id(i), lib.targets()[i]);
                for v in raw.row(i) {
                    let _ = write!(buf, ",{v}");
                }
                buf.push('\n');
            }
        }
        FeatureKind::Fingerprint => {
            buf.push_str("id,target,fp_hex\n");
            for i in 0..lib.len() {
                let _ = writeln!(buf, "{},{},{}", lib.id(i), lib.targets()[i], bits_to_hex(raw.row(i)));
            }
        }
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn save_library(lib: &Library, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = std::io::BufWriter::new(file);
    write_library(lib, &mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "id,target,f0,f1\nm1,0.5,1,2\nm2,1.5,3,4\nm3,-2,5,6.25\n";

    fn load(text: &str, fmt: LibraryFormat) -> Result<Library> {
        read_library(text.as_bytes(), fmt, ObjectiveSense::Maximize)
    }

    #[test]
    fn parses_feature_csv() {
        let lib = load(SMALL, LibraryFormat::FeatureCsv).unwrap();
        assert_eq!(lib.len(), 3);
        assert_eq!(lib.dim(), 2);
        assert_eq!(lib.targets(), &[0.5, 1.5, -2.0]);
        assert_eq!(lib.raw_features().row(2), &[5.0, 6.25]);
    }

    #[test]
    fn ragged_row_names_line() {
        let text = "id,target,f0,f1\nm1,0.5,1,2\nm2,1.5,3\n";
        match load(text, LibraryFormat::FeatureCsv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_empty_rejected() {
        let dup = "id,target,f0\na,1,0\na,2,1\n";
        assert!(matches!(load(dup, LibraryFormat::FeatureCsv), Err(Error::DuplicateId(_))));
        assert!(matches!(load("", LibraryFormat::FeatureCsv), Err(Error::EmptyLibrary)));
        assert!(matches!(load("id,target,f0\n", LibraryFormat::FeatureCsv), Err(Error::EmptyLibrary)));
    }

    #[test]
    fn fingerprint_expansion() {
        let hex = format!("FF00{}", "0".repeat(124));
        let bits = hex_to_bits(&hex).unwrap();
        assert_eq!(bits.len(), 512);
        assert!(bits[..8].iter().all(|b| *b == 1.0));
        assert!(bits[8..].iter().all(|b| *b == 0.0));
        assert_eq!(bits_to_hex(&bits), hex);
    }

    #[test]
    fn fingerprint_file_is_not_rescaled() {
        let text = format!("id,target,fp_hex\na,1,{}\nb,2,{}\n", "F".repeat(128), "0".repeat(128));
        let lib = load(&text, LibraryFormat::FingerprintHexCsv).unwrap();
        assert_eq!(lib.dim(), 512);
        assert_eq!(lib.features().row(0)[0], 1.0);
        assert_eq!(lib.features().row(1)[511], 0.0);
    }

    #[test]
    fn bad_fingerprint_length() {
        let text = "id,target,fp_hex\na,1,FF\n";
        assert!(matches!(load(text, LibraryFormat::FingerprintHexCsv), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let text = "# batchscreen-library n=3\nid,target,f0,f1\nm1,0.5,1,2\nm2,1.5,3,4\nm3,-2,5,6.25\n";
        let lib = load(text, LibraryFormat::FeatureCsv).unwrap();
        let mut out = Vec::new();
        write_library(&lib, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);

        let fp = format!("id,target,fp_hex\na,1,{}\n", "0123456789ABCDEF".repeat(8));
        let lib = load(&fp, LibraryFormat::FingerprintHexCsv).unwrap();
        let mut out = Vec::new();
        write_library(&lib, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), fp);
    }

    #[test]
    fn declared_count_checked() {
        let text = "# n=4\nid,target,f0\na,1,0\nb,2,1\n";
        assert!(matches!(
            load(text, LibraryFormat::FeatureCsv),
            Err(Error::DeclaredCount { declared: 4, found: 2 })
        ));
    }
}
