use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A multichannel recording segment: `channels × samples` values at a fixed
/// sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    values: DMatrix<f64>,
    sample_rate: f64,
}

impl Trial {
    pub fn new(values: DMatrix<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::Validation(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if values.nrows() == 0 {
            return Err(Error::Validation("trial has no channels".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("trial has non-finite samples".into()));
        }
        Ok(Trial {
            values,
            sample_rate,
        })
    }

    /// Builds a trial from one slice per channel.
    pub fn from_rows(rows: &[Vec<f64>], sample_rate: f64) -> Result<Self> {
        let channels = rows.len();
        let samples = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != samples) {
            return Err(Error::Validation("channel rows differ in length".into()));
        }
        let values = DMatrix::from_fn(channels, samples, |c, n| rows[c][n]);
        Trial::new(values, sample_rate)
    }

    /// Builds a trial from row-major `channels × samples` data.
    pub fn from_row_major(
        channels: usize,
        samples: usize,
        data: &[f64],
        sample_rate: f64,
    ) -> Result<Self> {
        if data.len() != channels * samples {
            return Err(Error::Validation(format!(
                "expected {} values for {channels}x{samples}, got {}",
                channels * samples,
                data.len()
            )));
        }
        Trial::new(
            DMatrix::from_row_slice(channels, samples, data),
            sample_rate,
        )
    }

    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn samples(&self) -> usize {
        self.values.ncols()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples() as f64 / self.sample_rate
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row(&self, channel: usize) -> Vec<f64> {
        self.values.row(channel).iter().copied().collect()
    }

    /// Row-major copy of the samples.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        for c in 0..self.channels() {
            out.extend(self.values.row(c).iter());
        }
        out
    }

    /// Samples `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Trial> {
        if start >= end || end > self.samples() {
            return Err(Error::Validation(format!(
                "invalid sample range [{start}, {end}) for a trial of {} samples",
                self.samples()
            )));
        }
        Ok(Trial {
            values: self.values.columns(start, end - start).into_owned(),
            sample_rate: self.sample_rate,
        })
    }

    pub fn scaled(&self, factor: f64) -> Trial {
        Trial {
            values: &self.values * factor,
            sample_rate: self.sample_rate,
        }
    }

    /// Appends `other` after this trial.
    pub fn concat(&self, other: &Trial) -> Result<Trial> {
        if other.channels() != self.channels() {
            return Err(Error::DimensionMismatch {
                expected: self.channels(),
                found: other.channels(),
            });
        }
        if other.sample_rate != self.sample_rate {
            return Err(Error::Validation("sample rates differ".into()));
        }
        let mut values = DMatrix::zeros(self.channels(), self.samples() + other.samples());
        values.columns_mut(0, self.samples()).copy_from(&self.values);
        values
            .columns_mut(self.samples(), other.samples())
            .copy_from(&other.values);
        Ok(Trial {
            values,
            sample_rate: self.sample_rate,
        })
    }

    /// Channel-wise mean-removed copy of the samples.
    pub(crate) fn centered(&self) -> DMatrix<f64> {
        let mut y = self.values.clone();
        for mut row in y.row_iter_mut() {
            let mean = row.mean();
            row.add_scalar_mut(-mean);
        }
        y
    }
}
