use std::io::Write;

use crate::error::{Error, Result};
use crate::hilbert::DensityMatrix;

/// One named real-valued record per sample time.
#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub unit: String,
    pub values: Vec<f64>,
}

impl Column {
    pub fn new(name: impl Into<String>, unit: impl Into<String>, values: Vec<f64>) -> Self {
        Self { name: name.into(), unit: unit.into(), values }
    }
}

/// Full state at one sample time.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub time: f64,
    pub state: DensityMatrix,
}

#[derive(Clone, Debug)]
pub struct TimeSeries {
    times: Vec<f64>,
    columns: Vec<Column>,
    snapshots: Vec<Snapshot>,
    time_unit: String,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, columns: Vec<Column>) -> Result<Self> {
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidGrid("times must be strictly increasing".into()));
        }
        if let Some(c) = columns.iter().find(|c| c.values.len() != times.len()) {
            return Err(Error::InvalidGrid(format!(
                "column `{}` has {} values for {} times",
                c.name,
                c.values.len(),
                times.len()
            )));
        }
        Ok(Self { times, columns, snapshots: Vec::new(), time_unit: "1/omega".into() })
    }

    pub(crate) fn with_snapshots(mut self, snapshots: Vec<Snapshot>) -> Self {
        self.snapshots = snapshots;
        self
    }

    /// Unit label written into the CSV time header.
    pub fn with_time_unit(mut self, unit: impl Into<String>) -> Self {
        self.time_unit = unit.into();
        self
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
            .ok_or_else(|| Error::MissingObservable(name.to_string()))
    }

    pub fn push_column(&mut self, column: Column) -> Result<()> {
        if column.values.len() != self.times.len() {
            return Err(Error::InvalidGrid(format!("column `{}` has wrong length", column.name)));
        }
        self.columns.push(column);
        Ok(())
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn final_state(&self) -> Option<&DensityMatrix> {
        self.snapshots.last().map(|s| &s.state)
    }

    /// CSV with a `time [unit]` column followed by one `name [unit]` column per record.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![format!("time [{}]", self.time_unit)];
        header.extend(self.columns.iter().map(|c| format!("{} [{}]", c.name, c.unit)));
        w.write_record(&header).map_err(csv_err)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(self.columns.iter().map(|c| c.values[k].to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
