//! Uniformly sampled multichannel time series.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, CoreResult};

/// A multichannel signal on the uniform grid `t_i = t0 + i * dt`.
///
/// Rows of `values` are time steps, columns are channels. Construction
/// rejects non-finite samples, so downstream numerics can assume finite
/// inputs. Integrators may attach spike times as sidecar metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    t0: f64,
    dt: f64,
    values: DMatrix<f64>,
    channel_names: Vec<String>,
    spike_times: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn new(
        t0: f64,
        dt: f64,
        values: DMatrix<f64>,
        channel_names: Vec<String>,
    ) -> CoreResult<Self> {
        if !t0.is_finite() || !dt.is_finite() {
            return Err(CoreError::invalid("trajectory grid must be finite"));
        }
        if dt <= 0.0 {
            return Err(CoreError::invalid(format!("dt must be > 0, got {dt}")));
        }
        if values.ncols() != channel_names.len() {
            return Err(CoreError::invalid(format!(
                "{} channels but {} channel names",
                values.ncols(),
                channel_names.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("trajectory values".into()));
        }
        Ok(Self {
            t0,
            dt,
            values,
            channel_names,
            spike_times: None,
        })
    }

    pub fn with_spike_times(mut self, spikes: Vec<f64>) -> Self {
        self.spike_times = Some(spikes);
        self
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of time steps (rows).
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn num_channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn spike_times(&self) -> Option<&[f64]> {
        self.spike_times.as_deref()
    }

    pub fn time(&self, row: usize) -> f64 {
        self.t0 + row as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    pub fn channel_index(&self, name: &str) -> CoreResult<usize> {
        self.channel_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CoreError::invalid(format!("unknown channel '{name}'")))
    }

    pub fn channel(&self, name: &str) -> CoreResult<DVector<f64>> {
        let idx = self.channel_index(name)?;
        Ok(self.values.column(idx).into_owned())
    }

    /// Root-mean-square of one channel, mean included.
    pub fn channel_rms(&self, idx: usize) -> f64 {
        let col = self.values.column(idx);
        (col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64).sqrt()
    }

    /// Pooled RMS over all channels and samples.
    pub fn pooled_rms(&self) -> f64 {
        let n = (self.values.nrows() * self.values.ncols()) as f64;
        (self.values.iter().map(|v| v * v).sum::<f64>() / n).sqrt()
    }

    /// Sub-range of rows as a new trajectory; `t0` shifts accordingly.
    pub fn slice_rows(&self, start: usize, len: usize) -> CoreResult<Self> {
        if start + len > self.len() {
            return Err(CoreError::invalid(format!(
                "row slice {}..{} out of bounds ({} rows)",
                start,
                start + len,
                self.len()
            )));
        }
        Ok(Self {
            t0: self.time(start),
            dt: self.dt,
            values: self.values.rows(start, len).into_owned(),
            channel_names: self.channel_names.clone(),
            spike_times: self.spike_times.as_ref().map(|s| {
                let lo = self.time(start);
                let hi = self.time(start + len.saturating_sub(1));
                s.iter().copied().filter(|t| *t >= lo && *t <= hi).collect()
            }),
        })
    }

    pub fn select_channels(&self, names: &[String]) -> CoreResult<Self> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.channel_index(n))
            .collect::<CoreResult<_>>()?;
        Ok(Self {
            t0: self.t0,
            dt: self.dt,
            values: self.values.select_columns(&idx),
            channel_names: names.to_vec(),
            spike_times: self.spike_times.clone(),
        })
    }

    /// Same grid and channel labels; used before pointwise comparisons.
    pub fn is_aligned_with(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self.channel_names == other.channel_names
            && (self.t0 - other.t0).abs() <= 1e-9 * self.dt.max(1.0)
            && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }

    pub fn require_aligned(&self, other: &Self, what: &str) -> CoreResult<()> {
        if self.is_aligned_with(other) {
            Ok(())
        } else {
            Err(CoreError::invalid(format!(
                "{what}: trajectories are not aligned (grid or channels differ)"
            )))
        }
    }

    /// Writes `t,<ch0>,<ch1>,...` rows at full double precision.
    pub fn write_csv(&self, path: &Path) -> CoreResult<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "t")?;
        for name in &self.channel_names {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(w, "{:.16e}", self.time(i))?;
            for j in 0..self.num_channels() {
                write!(w, ",{:.16e}", self.values[(i, j)])?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Spike-time sidecar: header `t_f`, one spike time per row.
    pub fn write_spike_csv(&self, path: &Path) -> CoreResult<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "t_f")?;
        for t in self.spike_times.as_deref().unwrap_or(&[]) {
            writeln!(w, "{t:.16e}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> CoreResult<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| CoreError::Parse(format!("{}: empty file", path.display())))??;
        let mut cols = header.split(',');
        if cols.next() != Some("t") {
            return Err(CoreError::Parse(format!(
                "{}: first column must be 't'",
                path.display()
            )));
        }
        let channel_names: Vec<String> = cols.map(str::to_string).collect();
        if channel_names.is_empty() {
            return Err(CoreError::Parse(format!(
                "{}: no data channels",
                path.display()
            )));
        }

        let mut times = Vec::new();
        let mut data = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != channel_names.len() + 1 {
                return Err(CoreError::Parse(format!(
                    "{}:{}: expected {} fields, got {}",
                    path.display(),
                    lineno + 2,
                    channel_names.len() + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| {
                    CoreError::Parse(format!("{}:{}: {e}", path.display(), lineno + 2))
                })
            };
            times.push(parse(fields[0])?);
            for f in &fields[1..] {
                data.push(parse(f)?);
            }
        }
        if times.len() < 2 {
            return Err(CoreError::Parse(format!(
                "{}: need at least two rows",
                path.display()
            )));
        }
        let dt = times[1] - times[0];
        if dt <= 0.0 {
            return Err(CoreError::Parse(format!(
                "{}: non-increasing time grid",
                path.display()
            )));
        }
        for (i, t) in times.iter().enumerate() {
            let expect = times[0] + i as f64 * dt;
            if (t - expect).abs() > 1e-6 * dt.max(1.0) {
                return Err(CoreError::Parse(format!(
                    "{}: non-uniform grid at row {i}",
                    path.display()
                )));
            }
        }
        let values = DMatrix::from_row_iterator(times.len(), channel_names.len(), data);
        Trajectory::new(times[0], dt, values, channel_names)
    }

    pub fn read_spike_csv(path: &Path) -> CoreResult<Vec<f64>> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "t_f" => {}
            _ => {
                return Err(CoreError::Parse(format!(
                    "{}: expected 't_f' header",
                    path.display()
                )))
            }
        }
        let mut spikes = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            spikes.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|e| CoreError::Parse(format!("{}: {e}", path.display())))?,
            );
        }
        Ok(spikes)
    }
}
