use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    Treated,
    Control,
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::Treated => "treated",
            Arm::Control => "control",
        })
    }
}

/// Observed data for one study: covariates (one row per unit), treatment
/// indicator and observed outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub x: DMatrix<f64>,
    pub z: Vec<bool>,
    pub y: Vec<f64>,
}

impl Observations {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn n_treated(&self) -> usize {
        self.z.iter().filter(|&&z| z).count()
    }

    pub fn n_control(&self) -> usize {
        self.len() - self.n_treated()
    }

    /// The arm that has no units, if any.
    pub fn empty_arm(&self) -> Option<Arm> {
        let treated = self.n_treated();
        if treated == 0 {
            Some(Arm::Treated)
        } else if treated == self.len() {
            Some(Arm::Control)
        } else {
            None
        }
    }

    /// Rows `idx` in the given order. Indices may repeat (bootstrap draws).
    pub fn subset(&self, idx: &[usize]) -> Observations {
        let p = self.x.ncols();
        let x = DMatrix::from_fn(idx.len(), p, |i, j| self.x[(idx[i], j)]);
        Observations {
            x,
            z: idx.iter().map(|&i| self.z[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}
