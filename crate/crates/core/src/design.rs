//! Regressor construction shared by every conditional model.
//!
//! A [`DesignRecipe`] lists the terms of a model; it builds design matrices
//! from an estimation view ([`ViewFrame`]) and single rows from simulated
//! states ([`RowInput`]), so fitting and Monte Carlo sampling use the same
//! column layout.

use serde::{Deserialize, Serialize};

use crate::data_model::{LongitudinalDataset, Transition};
use crate::glm::DesignMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Intercept,
    /// One indicator per post-baseline time point (replaces `Intercept`).
    TimeIntercepts,
    /// Current outcome.
    Y,
    /// Current confounders.
    Z,
    LagY,
    LagZ,
    X,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignRecipe {
    pub terms: Vec<Term>,
}

/// Values available when building one design row.
#[derive(Debug, Clone, Copy)]
pub struct RowInput<'a> {
    pub time: usize,
    pub y: f64,
    pub z: &'a [f64],
    pub y_lag: f64,
    pub z_lag: &'a [f64],
    pub x: &'a [f64],
}

/// Dimensions the recipe expands against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub k: usize,
    pub z_names: Vec<String>,
    pub x_names: Vec<String>,
}

impl Layout {
    pub fn of(ds: &LongitudinalDataset) -> Layout {
        Layout { k: ds.k, z_names: ds.z_names.clone(), x_names: ds.x_names.clone() }
    }
}

impl DesignRecipe {
    pub fn new(terms: &[Term]) -> Self {
        DesignRecipe { terms: terms.to_vec() }
    }

    pub fn uses_time(&self) -> bool {
        self.terms.contains(&Term::TimeIntercepts)
    }

    pub fn labels(&self, layout: &Layout) -> Vec<String> {
        let mut out = Vec::new();
        for t in &self.terms {
            match t {
                Term::Intercept => out.push("intercept".to_string()),
                Term::TimeIntercepts => out.extend((1..layout.k).map(|j| format!("time{j}"))),
                Term::Y => out.push("y".into()),
                Term::Z => out.extend(layout.z_names.iter().cloned()),
                Term::LagY => out.push("lag_y".into()),
                Term::LagZ => out.extend(layout.z_names.iter().map(|n| format!("lag_{n}"))),
                Term::X => out.extend(layout.x_names.iter().cloned()),
            }
        }
        out
    }

    pub fn width(&self, layout: &Layout) -> usize {
        self.terms
            .iter()
            .map(|t| match t {
                Term::Intercept | Term::Y | Term::LagY => 1,
                Term::TimeIntercepts => layout.k.saturating_sub(1),
                Term::Z | Term::LagZ => layout.z_names.len(),
                Term::X => layout.x_names.len(),
            })
            .sum()
    }

    /// Writes one design row into `out` (cleared first).
    pub fn fill_row(&self, k: usize, input: &RowInput<'_>, out: &mut Vec<f64>) {
        out.clear();
        for t in &self.terms {
            match t {
                Term::Intercept => out.push(1.0),
                Term::TimeIntercepts => out.extend((1..k).map(|j| if j == input.time { 1.0 } else { 0.0 })),
                Term::Y => out.push(input.y),
                Term::Z => out.extend_from_slice(input.z),
                Term::LagY => out.push(input.y_lag),
                Term::LagZ => out.extend_from_slice(input.z_lag),
                Term::X => out.extend_from_slice(input.x),
            }
        }
    }

    pub fn build(&self, frame: &ViewFrame) -> DesignMatrix {
        let labels = self.labels(&frame.layout);
        let p = labels.len();
        let mut values = Vec::with_capacity(frame.len() * p);
        let mut row = Vec::with_capacity(p);
        for i in 0..frame.len() {
            self.fill_row(frame.layout.k, &frame.row_input(i), &mut row);
            values.extend_from_slice(&row);
        }
        DesignMatrix::from_row_slice(frame.len(), p, &values, labels)
    }
}

/// Flat numeric copy of an estimation view.
#[derive(Debug, Clone)]
pub struct ViewFrame {
    pub layout: Layout,
    pub participant: Vec<usize>,
    pub time: Vec<usize>,
    pub y: Vec<f64>,
    pub y_lag: Vec<f64>,
    /// Row-major, `len * n_z`.
    pub z: Vec<f64>,
    pub z_lag: Vec<f64>,
    /// Row-major, `len * n_x`.
    pub x: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<Option<bool>>,
}

impl ViewFrame {
    pub fn from_view(ds: &LongitudinalDataset, view: &[Transition<'_>]) -> ViewFrame {
        let layout = Layout::of(ds);
        let mut f = ViewFrame {
            layout,
            participant: Vec::with_capacity(view.len()),
            time: Vec::with_capacity(view.len()),
            y: Vec::with_capacity(view.len()),
            y_lag: Vec::with_capacity(view.len()),
            z: Vec::new(),
            z_lag: Vec::new(),
            x: Vec::new(),
            b: Vec::with_capacity(view.len()),
            c: Vec::with_capacity(view.len()),
        };
        for t in view {
            f.participant.push(t.participant_index);
            f.time.push(t.current.time);
            f.y.push(t.current.y.expect("view rows are non-missing"));
            f.y_lag.push(t.lagged.y.expect("view rows are non-missing"));
            f.z.extend(t.current.z.iter().map(|v| v.expect("view rows are non-missing")));
            f.z_lag.extend(t.lagged.z.iter().map(|v| v.expect("view rows are non-missing")));
            f.x.extend_from_slice(&t.participant.x);
            f.b.push(t.current.b.unwrap_or(f64::NAN));
            f.c.push(t.current.c);
        }
        f
    }

    pub fn of_dataset(ds: &LongitudinalDataset) -> ViewFrame {
        let view = crate::data_model::estimation_view(ds);
        ViewFrame::from_view(ds, &view)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_z(&self) -> usize {
        self.layout.z_names.len()
    }

    pub fn n_x(&self) -> usize {
        self.layout.x_names.len()
    }

    pub fn z_row(&self, i: usize) -> &[f64] {
        let n = self.n_z();
        &self.z[i * n..(i + 1) * n]
    }

    pub fn z_lag_row(&self, i: usize) -> &[f64] {
        let n = self.n_z();
        &self.z_lag[i * n..(i + 1) * n]
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        let n = self.n_x();
        &self.x[i * n..(i + 1) * n]
    }

    /// Column `j` of the current confounders.
    pub fn z_column(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.z_row(i)[j]).collect()
    }

    pub fn row_input(&self, i: usize) -> RowInput<'_> {
        RowInput {
            time: self.time[i],
            y: self.y[i],
            z: self.z_row(i),
            y_lag: self.y_lag[i],
            z_lag: self.z_lag_row(i),
            x: self.x_row(i),
        }
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> ViewFrame {
        let nz = self.n_z();
        let nx = self.n_x();
        let mut f = ViewFrame {
            layout: self.layout.clone(),
            participant: Vec::with_capacity(rows.len()),
            time: Vec::with_capacity(rows.len()),
            y: Vec::with_capacity(rows.len()),
            y_lag: Vec::with_capacity(rows.len()),
            z: Vec::with_capacity(rows.len() * nz),
            z_lag: Vec::with_capacity(rows.len() * nz),
            x: Vec::with_capacity(rows.len() * nx),
            b: Vec::with_capacity(rows.len()),
            c: Vec::with_capacity(rows.len()),
        };
        for &i in rows {
            f.participant.push(self.participant[i]);
            f.time.push(self.time[i]);
            f.y.push(self.y[i]);
            f.y_lag.push(self.y_lag[i]);
            f.z.extend_from_slice(self.z_row(i));
            f.z_lag.extend_from_slice(self.z_lag_row(i));
            f.x.extend_from_slice(self.x_row(i));
            f.b.push(self.b[i]);
            f.c.push(self.c[i]);
        }
        f
    }
}

/// Default model recipes.
pub mod recipes {
    use super::{DesignRecipe, Term};

    /// Compliance probability given current and lagged confounders and
    /// baseline covariates.
    pub fn compliance(per_time_intercepts: bool) -> DesignRecipe {
        let first = if per_time_intercepts { Term::TimeIntercepts } else { Term::Intercept };
        DesignRecipe::new(&[first, Term::Y, Term::Z, Term::LagY, Term::LagZ, Term::X])
    }

    /// Biomarker mean within a compliance class.
    pub fn biomarker() -> DesignRecipe {
        DesignRecipe::new(&[Term::Intercept, Term::Y, Term::Z, Term::LagY, Term::LagZ, Term::X])
    }

    /// Confounder mean given the lagged state.
    pub fn confounder() -> DesignRecipe {
        DesignRecipe::new(&[Term::Intercept, Term::LagY, Term::LagZ, Term::X])
    }

    /// Outcome mean given current confounders and the lagged state.
    pub fn outcome() -> DesignRecipe {
        DesignRecipe::new(&[Term::Intercept, Term::Z, Term::LagY, Term::LagZ, Term::X])
    }

    /// Compliance model of the joint biomarker-outcome mixture (current
    /// outcome excluded).
    pub fn joint_compliance(per_time_intercepts: bool) -> DesignRecipe {
        let first = if per_time_intercepts { Term::TimeIntercepts } else { Term::Intercept };
        DesignRecipe::new(&[first, Term::Z, Term::LagY, Term::LagZ, Term::X])
    }
}
