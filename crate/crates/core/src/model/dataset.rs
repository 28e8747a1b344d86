use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labels and covariates for logistic regression.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticData {
    /// `n × d` covariate matrix, one observation per row.
    pub x: DMatrix<f64>,
    /// Labels in `{-1, +1}`.
    pub y: Vec<f64>,
    /// Parameter the labels were drawn from, when synthetic.
    pub theta0: Option<DVector<f64>>,
}

impl LogisticData {
    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticDatasetConfig {
    pub d: usize,
    pub n: usize,
    pub seed: u64,
}

/// Draws a dataset from the logistic model itself.
///
/// Covariates are i.i.d. standard normal, `θ₀ ~ N(0, d^{-1/2} I)` so that
/// `θ₀·xᵢ` stays of order one for any `d`, and `P(yᵢ = ±1) = σ(±θ₀·xᵢ)`.
/// Draw order is covariates (row-major), then `θ₀`, then one uniform per
/// label, all from a single ChaCha8 stream, so output is bit-reproducible.
pub fn generate_dataset(config: &SyntheticDatasetConfig) -> Result<LogisticData> {
    if config.d == 0 {
        return Err(Error::InvalidArgument(
            "dimension must be at least 1".into(),
        ));
    }
    let (d, n) = (config.d, config.n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            x[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }

    let theta_sd = (d as f64).powf(-0.25);
    let prior = Normal::new(0.0, theta_sd).expect("positive standard deviation");
    let theta0 = DVector::from_fn(d, |_, _| prior.sample(&mut rng));

    let logits = &x * &theta0;
    let y = logits
        .iter()
        .map(|&t| {
            let p_pos = 1.0 / (1.0 + (-t).exp());
            let u: f64 = rng.random();
            if u < p_pos {
                1.0
            } else {
                -1.0
            }
        })
        .collect();

    Ok(LogisticData {
        x,
        y,
        theta0: Some(theta0),
    })
}

/// Writes `y,x1,...,xd` with every float at 17 significant digits.
pub fn write_dataset_csv<W: Write>(data: &LogisticData, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = data.dim();
    let mut header = Vec::with_capacity(d + 1);
    header.push("y".to_string());
    header.extend((1..=d).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for (i, &y) in data.y.iter().enumerate() {
        let mut rec = Vec::with_capacity(d + 1);
        rec.push(if y > 0.0 {
            "1".to_string()
        } else {
            "-1".to_string()
        });
        rec.extend((0..d).map(|j| format!("{:.16e}", data.x[(i, j)])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(reader: R) -> Result<LogisticData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || &header[0] != "y" {
        return Err(Error::Dataset("first column must be `y`".into()));
    }
    let d = header.len() - 1;
    if d == 0 {
        return Err(Error::Dataset("no covariate columns".into()));
    }
    for (j, name) in header.iter().skip(1).enumerate() {
        if name != format!("x{}", j + 1) {
            return Err(Error::Dataset(format!("unexpected column `{name}`")));
        }
    }

    let mut y = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != d + 1 {
            return Err(Error::Dataset(format!(
                "row {} has {} fields, expected {}",
                line + 1,
                rec.len(),
                d + 1
            )));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Dataset(format!("row {}: cannot parse `{s}`", line + 1)))
        };
        let label = parse(&rec[0])?;
        if label != 1.0 && label != -1.0 {
            return Err(Error::Dataset(format!(
                "row {}: label must be -1 or 1",
                line + 1
            )));
        }
        y.push(label);
        for field in rec.iter().skip(1) {
            values.push(parse(field)?);
        }
    }
    let n = y.len();
    Ok(LogisticData {
        x: DMatrix::from_row_slice(n, d, &values),
        y,
        theta0: None,
    })
}
