//! Plain-text CSV import and export. Numbers are written with 17 significant
//! digits so doubles round-trip exactly.

use std::io::{self, BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::classifier::ExtendedClassifier;
use crate::decomposition::LossBreakdown;
use crate::error::{CollapseError, Result};
use crate::flow::FlowTrajectory;
use crate::metrics::NcReport;
use crate::model::{FeatureMatrix, ProblemDims};
use crate::snr::SnrSpectrum;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(fmt_f64).collect::<Vec<_>>().join(",")
}

fn write_rows<W: Write>(w: &mut W, m: &DMatrix<f64>) -> io::Result<()> {
    for row in m.row_iter() {
        writeln!(w, "{}", join(row.iter().copied()))?;
    }
    Ok(())
}

fn parse_row(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split(',')
        .map(|field| {
            field.trim().parse::<f64>().map_err(|e| {
                CollapseError::Parse(format!("line {lineno}: {field:?} is not a number ({e})"))
            })
        })
        .collect()
}

fn read_rows<R: BufRead>(r: R) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line.map_err(|e| CollapseError::Parse(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(parse_row(&line, k + 1)?);
    }
    Ok(rows)
}

fn rows_to_matrix(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if let Some((k, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(CollapseError::Parse(format!(
            "row {k} has {} fields, expected {ncols}",
            row.len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

/// First row `P,C,N`, then `P` rows of `CN` values.
pub fn write_features<W: Write>(w: &mut W, h: &FeatureMatrix) -> io::Result<()> {
    let d = h.dims();
    writeln!(
        w,
        "{},{},{}",
        d.feature_dim(),
        d.num_classes(),
        d.examples_per_class()
    )?;
    write_rows(w, h.data())
}

pub fn read_features<R: BufRead>(r: R) -> Result<FeatureMatrix> {
    let rows = read_rows(r)?;
    let (header, body) = rows
        .split_first()
        .ok_or_else(|| CollapseError::Parse("empty feature file".into()))?;
    let as_count = |v: f64| -> Result<usize> {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(CollapseError::Parse(format!("bad dimension {v} in header")))
        }
    };
    let [p, c, n] = header.as_slice() else {
        return Err(CollapseError::Parse("header must be P,C,N".into()));
    };
    let dims = ProblemDims::new(as_count(*c)?, as_count(*n)?, as_count(*p)?)?;
    if body.len() != dims.feature_dim() {
        return Err(CollapseError::Parse(format!(
            "expected {} feature rows, found {}",
            dims.feature_dim(),
            body.len()
        )));
    }
    FeatureMatrix::new(dims, rows_to_matrix(body, dims.num_examples())?)
}

/// `C` rows of `P + 1` values; the bias is the last column.
pub fn write_classifier<W: Write>(w: &mut W, clf: &ExtendedClassifier) -> io::Result<()> {
    write_rows(w, &clf.stacked())
}

pub fn read_classifier<R: BufRead>(r: R) -> Result<ExtendedClassifier> {
    let rows = read_rows(r)?;
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.len() < 2 || ncols < 2 {
        return Err(CollapseError::Parse(
            "classifier needs at least 2 rows and 2 columns".into(),
        ));
    }
    ExtendedClassifier::from_stacked(&rows_to_matrix(&rows, ncols)?)
}

pub const LOSS_HEADER: &str = "t,total,ls,perp,nc1,nc23";

pub fn loss_row(t: f64, b: &LossBreakdown) -> String {
    join([t, b.total, b.ls_part, b.perp_part, b.nc1_part, b.nc23_part])
}

pub const NC_HEADER: &str = "t,nc1,equinorm_cv,angle_dev,self_duality,ncc_mismatch";

pub fn nc_row(t: f64, r: &NcReport) -> String {
    join([
        t,
        r.nc1_trace,
        r.equinorm_cv,
        r.angle_dev,
        r.self_duality,
        r.ncc_mismatch,
    ])
}

/// One row of singular values, then the rows of `U`, then the rows of `V`.
pub fn write_spectrum<W: Write>(w: &mut W, spec: &SnrSpectrum) -> io::Result<()> {
    writeln!(w, "{}", join(spec.singular_values.iter().copied()))?;
    write_rows(w, &spec.left_vectors)?;
    write_rows(w, &spec.right_vectors)
}

/// Reads a spectrum written by [`write_spectrum`] for `P × C` SNR matrices.
pub fn read_spectrum<R: BufRead>(r: R, feature_dim: usize) -> Result<SnrSpectrum> {
    let rows = read_rows(r)?;
    let c = rows.first().map(|r| r.len()).unwrap_or(0);
    if c < 2 || rows.len() != 1 + feature_dim + c {
        return Err(CollapseError::Parse("malformed spectrum file".into()));
    }
    let k = feature_dim.min(c);
    Ok(SnrSpectrum {
        singular_values: DVector::from_vec(rows[0].clone()),
        left_vectors: rows_to_matrix(&rows[1..1 + feature_dim], k)?,
        right_vectors: rows_to_matrix(&rows[1 + feature_dim..], c)?,
    })
}

pub fn trajectory_header(num_classes: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..num_classes).map(|j| format!("omega_{j}")));
    cols.extend(
        ["L_total", "L_nc1", "L_nc23", "L_perp", "drift", "manifold_residual"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols.join(",")
}

pub fn write_trajectory<W: Write>(w: &mut W, traj: &FlowTrajectory) -> io::Result<()> {
    let c = traj.omegas.first().map(|o| o.len() + 1).unwrap_or(2);
    writeln!(w, "{}", trajectory_header(c))?;
    for k in 0..traj.len() {
        let l = &traj.losses[k];
        let mut row = vec![traj.times[k]];
        row.extend(&traj.omegas[k]);
        row.extend([
            l.total,
            l.nc1_part,
            l.nc23_part,
            l.perp_part,
            traj.drift[k],
            traj.manifold_residuals[k],
        ]);
        writeln!(w, "{}", join(row))?;
    }
    Ok(())
}
