use std::fmt::Write as _;

use serde::Serialize;

use crate::moments::qam_moments;
use crate::orthopoly::{build_basis, BasisError};
use crate::signals::qam_constellation;

/// Values as printed in the published QAM table (rounded).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceRow {
    /// `[μ₂, μ₄, μ₆, μ₈]`
    pub moments: [f64; 4],
    /// `[z₂², z₃²]`; empty for 4QAM.
    pub norm_sq: Vec<f64>,
    /// Inner monic coefficients of φ₃ as `(|x|²x, x)`.
    pub phi3_inner: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableFunction {
    /// 1-based, as φ₁, φ₂, …
    pub index: usize,
    /// `z²`, the power of the monic form.
    pub norm_sq: f64,
    /// Monic coefficients, ascending powers of `|x|²` (last entry 1).
    pub monic: Vec<f64>,
    /// Orthonormal coefficients `ĉ`.
    pub coeffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub constellation: String,
    pub order: usize,
    /// `[μ₂, μ₄, …, μ_{2P}]` from the constellation average.
    pub moments: Vec<f64>,
    pub effective_rank: usize,
    pub functions: Vec<TableFunction>,
    pub reference: ReferenceRow,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableReport {
    #[serde(rename = "P")]
    pub max_order: usize,
    pub rows: Vec<TableRow>,
}

fn reference_row(order: usize) -> ReferenceRow {
    match order {
        4 => ReferenceRow { moments: [1.0; 4], norm_sq: vec![], phi3_inner: None },
        16 => ReferenceRow {
            moments: [1.0, 1.32, 1.96, 3.1248],
            norm_sq: vec![0.2176, 0.0542],
            phi3_inner: Some((-2.47, 1.30)),
        },
        64 => ReferenceRow {
            moments: [1.0, 1.381, 2.2258, 3.9630],
            norm_sq: vec![0.3188, 0.1421],
            phi3_inner: Some((-2.7898, 1.6268)),
        },
        256 => ReferenceRow {
            moments: [1.0, 1.3953, 2.2922, 4.1910],
            norm_sq: vec![0.3453, 0.1772],
            phi3_inner: Some((-2.8747, 1.7189)),
        },
        _ => unreachable!("table covers 4/16/64/256QAM"),
    }
}

/// Moments and orthonormal polynomials of 4/16/64/256QAM up to order `P`.
pub fn table_command(max_order: usize) -> Result<TableReport, BasisError> {
    if max_order < 5 || max_order % 2 == 0 {
        return Err(BasisError::InvalidOrder(format!("table needs odd P ≥ 5, got {max_order}")));
    }
    let rows = [4usize, 16, 64, 256]
        .into_iter()
        .map(|order| {
            let points = qam_constellation(order).expect("supported order");
            let mu = qam_moments(&points, max_order).expect("non-empty constellation");
            let basis = build_basis(&mu, max_order)?;
            let functions = (0..basis.effective_rank())
                .map(|i| TableFunction {
                    index: i + 1,
                    norm_sq: basis.norm_sq(i),
                    monic: basis.monic(i),
                    coeffs: basis.coeffs()[i].clone(),
                })
                .collect();
            Ok(TableRow {
                constellation: format!("{order}QAM"),
                order,
                moments: mu.values().to_vec(),
                effective_rank: basis.effective_rank(),
                functions,
                reference: reference_row(order),
            })
        })
        .collect::<Result<Vec<_>, BasisError>>()?;
    Ok(TableReport { max_order, rows })
}

impl TableReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text rendering with the published values alongside.
    pub fn to_human(&self) -> String {
        let mut s = String::new();
        writeln!(s, "Orthonormal polynomials of square QAM, P = {}", self.max_order).unwrap();
        for row in &self.rows {
            writeln!(s).unwrap();
            writeln!(s, "{}  (effective rank {})", row.constellation, row.effective_rank).unwrap();
            let mu: Vec<String> = row.moments.iter().take(4).map(|v| format!("{v:.6}")).collect();
            let pm: Vec<String> = row.reference.moments.iter().map(|v| format!("{v}")).collect();
            writeln!(s, "  mu_2..mu_8   {}   published [{}]", mu.join(", "), pm.join(", ")).unwrap();
            if row.effective_rank == 1 {
                writeln!(s, "  rank-1 moment matrix: only phi_1(x) = x exists").unwrap();
            }
            for f in &row.functions {
                let terms: Vec<String> = f
                    .monic
                    .iter()
                    .enumerate()
                    .rev()
                    .map(|(k, c)| match k {
                        0 => format!("{c:+.6} x"),
                        1 => format!("{c:+.6} |x|^2 x"),
                        _ => format!("{c:+.6} |x|^{} x", 2 * k),
                    })
                    .collect();
                let published = match f.index {
                    1 => String::new(),
                    i => row.reference.norm_sq.get(i - 2).map(|v| format!("   published z^2 = {v}")).unwrap_or_default(),
                };
                writeln!(s, "  phi_{}  z^2 = {:.6}  monic: {}{}", f.index, f.norm_sq, terms.join(" "), published).unwrap();
            }
            if let Some((a, b)) = row.reference.phi3_inner {
                writeln!(s, "  published phi_3 inner coefficients: ({a}, {b})").unwrap();
            }
        }
        s
    }
}
