//! Line-delimited JSON datasets and flat `key = value` generator configs.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::generate::GenConfig;
use super::scene::GroundingSample;
use crate::error::{Error, Result};

pub fn write_dataset(path: &Path, samples: &[GroundingSample]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        let line = serde_json::to_string(s).expect("samples always serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<GroundingSample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses one record per nonblank line; errors carry the 1-based line number.
pub fn parse_dataset(reader: impl BufRead) -> Result<Vec<GroundingSample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<dataset>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(sample);
    }
    Ok(out)
}

pub fn write_config(path: &Path, config: &GenConfig) -> Result<()> {
    let text = toml::to_string(config).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_config(path: &Path) -> Result<GenConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<GenConfig> {
    let config: GenConfig = toml::from_str(text).map_err(|e| Error::Parse {
        line: e
            .span()
            .map(|s| text[..s.start].lines().count().max(1))
            .unwrap_or(0),
        message: e.message().to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::generate::generate_dataset;

    #[test]
    fn dataset_round_trip() {
        let cfg = GenConfig {
            samples: 5,
            ..GenConfig::default()
        };
        let data = generate_dataset(&cfg, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&path, &data).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), data);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let cfg = GenConfig {
            samples: 2,
            ..GenConfig::default()
        };
        let data = generate_dataset(&cfg, 2).unwrap();
        let text = format!(
            "{}\n{{\"objects\": 3}}\n",
            serde_json::to_string(&data[0]).unwrap()
        );
        match parse_dataset(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn flat_config_parses_with_defaults() {
        let cfg = parse_config("samples = 12\nmax_objects = 8\n").unwrap();
        assert_eq!(cfg.samples, 12);
        assert_eq!(cfg.max_objects, 8);
        assert_eq!(cfg.min_objects, GenConfig::default().min_objects);
        assert!(parse_config("samples = 12\nbogus = 1\n").is_err());
    }
}
