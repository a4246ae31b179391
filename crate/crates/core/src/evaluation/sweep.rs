use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Hyperparameter values to enumerate; the sweep runs their cartesian product.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepGrid {
    pub radius: Vec<usize>,
    pub code: Vec<usize>,
    pub clusters: Vec<usize>,
    pub window: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            radius: vec![0, 1, 2],
            code: vec![4, 8, 16, 32],
            clusters: vec![2, 5, 10, 15, 20],
            window: vec![8, 10, 15, 20],
        }
    }
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out = Vec::new();
        for &radius in &self.radius {
            for &code in &self.code {
                for &clusters in &self.clusters {
                    for &window in &self.window {
                        out.push(SweepCell {
                            radius,
                            code,
                            clusters,
                            window,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("r", &self.radius),
            ("e", &self.code),
            ("k", &self.clusters),
            ("w", &self.window),
        ] {
            if v.is_empty() {
                return Err(Error::Config(format!("sweep axis {name} has no values")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SweepCell {
    pub radius: usize,
    pub code: usize,
    pub clusters: usize,
    pub window: usize,
}

impl SweepCell {
    fn axis(&self, axis: usize) -> usize {
        [self.radius, self.code, self.clusters, self.window][axis]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: SweepCell,
    /// mIoU per scene, in scene order. Empty when the cell failed.
    pub per_scene: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Mean and standard deviation of the per-cell means for one value of one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisSummary {
    pub axis: &'static str,
    pub value: usize,
    pub mean: f64,
    pub std: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub scenes: Vec<String>,
    pub rows: Vec<SweepRow>,
}

const AXES: [&str; 4] = ["r", "e", "k", "w"];

/// Population mean and standard deviation. `(NaN, NaN)` for no values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs `run` for every cell of `grid`. `run` returns one mIoU per scene.
/// A failing cell is recorded with its error and the sweep continues.
pub fn sweep<F>(grid: &SweepGrid, scenes: &[String], mut run: F) -> Result<SweepTable>
where
    F: FnMut(&SweepCell) -> Result<Vec<f64>>,
{
    grid.validate()?;
    let mut rows = Vec::new();
    for cell in grid.cells() {
        let row = match run(&cell) {
            Ok(per_scene) if per_scene.len() == scenes.len() => {
                let (mean, std) = mean_std(&per_scene);
                SweepRow {
                    cell,
                    per_scene,
                    mean,
                    std,
                    error: None,
                }
            }
            Ok(per_scene) => failed(cell, format!("{} results for {} scenes", per_scene.len(), scenes.len())),
            Err(e) => failed(cell, e.to_string()),
        };
        match &row.error {
            None => log::info!("sweep {cell:?}: mIoU {:.4} ± {:.4}", row.mean, row.std),
            Some(e) => log::warn!("sweep {cell:?} failed: {e}"),
        }
        rows.push(row);
    }
    Ok(SweepTable {
        scenes: scenes.to_vec(),
        rows,
    })
}

fn failed(cell: SweepCell, error: String) -> SweepRow {
    SweepRow {
        cell,
        per_scene: Vec::new(),
        mean: f64::NAN,
        std: f64::NAN,
        error: Some(error),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl SweepTable {
    /// Aggregates over successful cells for every value of every axis.
    pub fn axis_summaries(&self) -> Vec<AxisSummary> {
        let mut out = Vec::new();
        for (a, name) in AXES.iter().enumerate() {
            let mut values: Vec<usize> = self.rows.iter().map(|r| r.cell.axis(a)).collect();
            values.sort_unstable();
            values.dedup();
            for value in values {
                let means: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.ok() && r.cell.axis(a) == value)
                    .map(|r| r.mean)
                    .collect();
                let (mean, std) = mean_std(&means);
                out.push(AxisSummary {
                    axis: name,
                    value,
                    mean,
                    std,
                    cells: means.len(),
                });
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,e,k,w");
        for scene in &self.scenes {
            s.push(',');
            s.push_str(&csv_field(scene));
        }
        s.push_str(",mean,std,error\n");
        for row in &self.rows {
            let c = row.cell;
            let _ = write!(s, "{},{},{},{}", c.radius, c.code, c.clusters, c.window);
            if row.ok() {
                for v in &row.per_scene {
                    let _ = write!(s, ",{v:.6}");
                }
                let _ = write!(s, ",{:.6},{:.6},", row.mean, row.std);
            } else {
                s.push_str(&",".repeat(self.scenes.len()));
                let _ = write!(s, ",,,{}", csv_field(row.error.as_deref().unwrap_or("")));
            }
            s.push('\n');
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("axis,value,mean,std,cells\n");
        for a in self.axis_summaries() {
            let _ = writeln!(s, "{},{},{:.6},{:.6},{}", a.axis, a.value, a.mean, a.std, a.cells);
        }
        s
    }
}
