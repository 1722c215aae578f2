//! Sample-file format: `# key=value` header lines echoing the generating
//! truth, then a CSV table `index,x_re,x_im,v_re,v_im`.

use std::collections::BTreeMap;
use std::path::Path;

use mwradar::{ComplexSample, Hypothesis, Observation, ParamVector};

use crate::error::CliError;

pub const SAMPLE_COLUMNS: [&str; 5] = ["index", "x_re", "x_im", "v_re", "v_im"];

/// Renders an observation. `extra` entries are appended to the header block.
pub fn render(obs: &Observation, extra: &[(&str, String)]) -> String {
    let t = &obs.truth;
    let mut out = String::new();
    let mut header = vec![
        ("samples", obs.len().to_string()),
        ("hypothesis", hypothesis_name(obs.hypothesis).to_string()),
        ("alpha_re", t.0[0].to_string()),
        ("alpha_im", t.0[1].to_string()),
        ("rho_re", t.0[2].to_string()),
        ("rho_im", t.0[3].to_string()),
        ("sigma2", t.0[4].to_string()),
    ];
    header.extend(extra.iter().map(|(k, v)| (*k, v.clone())));
    for (k, v) in header {
        out.push_str(&format!("# {k}={v}\n"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SAMPLE_COLUMNS).expect("in-memory write");
    for (i, (x, v)) in obs.samples.iter().zip(&obs.steering).enumerate() {
        w.write_record([
            i.to_string(),
            x.re.to_string(),
            x.im.to_string(),
            v.re.to_string(),
            v.im.to_string(),
        ])
        .expect("in-memory write");
    }
    let body = w.into_inner().expect("in-memory flush");
    out.push_str(std::str::from_utf8(&body).expect("ascii output"));
    out
}

pub fn hypothesis_name(h: Hypothesis) -> &'static str {
    match h {
        Hypothesis::H0 => "H0",
        Hypothesis::H1 => "H1",
    }
}

fn malformed(path: &Path, message: impl Into<String>) -> CliError {
    CliError::SampleFile {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Parses the header block into key/value pairs.
pub fn header_fields(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .map_while(|l| l.strip_prefix('#'))
        .filter_map(|l| l.trim().split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Reads a sample file. A missing truth block is allowed; the truth then
/// defaults to `alpha = 0, rho = 0, sigma2 = 1` under `H0`.
pub fn read(path: &Path) -> Result<Observation, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse(&text, path)
}

pub fn parse(text: &str, path: &Path) -> Result<Observation, CliError> {
    let fields = header_fields(text);
    let number = |key: &str, default: f64| -> Result<f64, CliError> {
        match fields.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| malformed(path, format!("header `{key}` is not a number: {v}"))),
        }
    };
    let truth = ParamVector::new([
        number("alpha_re", 0.0)?,
        number("alpha_im", 0.0)?,
        number("rho_re", 0.0)?,
        number("rho_im", 0.0)?,
        number("sigma2", 1.0)?,
    ]);
    let hypothesis = match fields.get("hypothesis").map(String::as_str) {
        None | Some("H0") => Hypothesis::H0,
        Some("H1") => Hypothesis::H1,
        Some(other) => return Err(malformed(path, format!("unknown hypothesis `{other}`"))),
    };

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| malformed(path, e.to_string()))?
        .clone();
    if headers.iter().ne(SAMPLE_COLUMNS) {
        return Err(malformed(
            path,
            format!(
                "expected columns {}, found {}",
                SAMPLE_COLUMNS.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut samples = Vec::new();
    let mut steering = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| malformed(path, e.to_string()))?;
        let value = |col: usize| -> Result<f64, CliError> {
            record[col].parse().map_err(|_| {
                malformed(
                    path,
                    format!(
                        "row {row}, column {}: `{}` is not a number",
                        SAMPLE_COLUMNS[col], &record[col]
                    ),
                )
            })
        };
        let index: usize = record[0]
            .parse()
            .map_err(|_| malformed(path, format!("row {row}: bad index `{}`", &record[0])))?;
        if index != row {
            return Err(malformed(path, format!("row {row} carries index {index}")));
        }
        samples.push(ComplexSample::new(value(1)?, value(2)?));
        steering.push(ComplexSample::new(value(3)?, value(4)?));
    }
    if let Some(n) = fields.get("samples") {
        if n.parse::<usize>().ok() != Some(samples.len()) {
            return Err(malformed(
                path,
                format!("header promises {n} samples, table has {}", samples.len()),
            ));
        }
    }
    Observation::from_parts(samples, steering, truth, hypothesis)
        .map_err(|e| malformed(path, e.to_string()))
}
