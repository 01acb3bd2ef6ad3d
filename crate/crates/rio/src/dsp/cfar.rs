//! Cell-averaging CFAR detection on a 2D power map.
//!
//! The threshold multiplier `α = N_r (P_fa^{−1/N_r} − 1)` makes the design
//! false-alarm rate exact for exponentially distributed noise power, provided
//! the averaging really uses `N_r` training cells — which is why the training
//! count is derived from the window geometry rather than configured
//! independently.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// CA-CFAR window: a square training band around a square guard band.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CfarConfig {
    /// Guard cells on each side of the cell under test.
    pub guard_cells: usize,
    /// Training cells on each side beyond the guard band.
    pub training_cells: usize,
    /// Design false-alarm probability.
    pub p_fa: f64,
}

impl Default for CfarConfig {
    fn default() -> Self {
        CfarConfig {
            guard_cells: 1,
            training_cells: 1,
            p_fa: 1.0e-3,
        }
    }
}

impl CfarConfig {
    /// Total number of training cells N_r in the band.
    pub fn n_training(&self) -> usize {
        let outer = 2 * (self.guard_cells + self.training_cells) + 1;
        let inner = 2 * self.guard_cells + 1;
        outer * outer - inner * inner
    }

    /// Threshold multiplier α = N_r (P_fa^(−1/N_r) − 1).
    pub fn alpha(&self) -> f64 {
        let n = self.n_training() as f64;
        n * (self.p_fa.powf(-1.0 / n) - 1.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.training_cells == 0 {
            return Err("need at least one training cell per side".into());
        }
        if !(self.p_fa > 0.0 && self.p_fa < 1.0) {
            return Err(format!("p_fa {} outside (0, 1)", self.p_fa));
        }
        Ok(())
    }
}

/// Runs CA-CFAR over the power map and returns the detected cells as
/// `(row, col)` pairs in row-major order. Cells whose training window would
/// leave the map are never declared targets.
pub fn ca_cfar(map: &DMatrix<f64>, cfg: &CfarConfig) -> Vec<(usize, usize)> {
    let (rows, cols) = map.shape();
    let reach = cfg.guard_cells + cfg.training_cells;
    if rows < 2 * reach + 1 || cols < 2 * reach + 1 {
        return Vec::new();
    }
    let alpha = cfg.alpha();
    let n_train = cfg.n_training() as f64;

    // Summed-area table, (rows+1) x (cols+1): sat[i][j] = sum of map[..i, ..j].
    let mut sat = vec![0.0f64; (rows + 1) * (cols + 1)];
    let stride = cols + 1;
    for i in 0..rows {
        let mut run = 0.0;
        for j in 0..cols {
            run += map[(i, j)];
            sat[(i + 1) * stride + (j + 1)] = sat[i * stride + (j + 1)] + run;
        }
    }
    let rect = |r0: usize, r1: usize, c0: usize, c1: usize| -> f64 {
        // Inclusive cell range [r0, r1] x [c0, c1].
        sat[(r1 + 1) * stride + (c1 + 1)] - sat[r0 * stride + (c1 + 1)]
            - sat[(r1 + 1) * stride + c0]
            + sat[r0 * stride + c0]
    };

    let g = cfg.guard_cells;
    let mut detections = Vec::new();
    for i in reach..rows - reach {
        for j in reach..cols - reach {
            let outer = rect(i - reach, i + reach, j - reach, j + reach);
            let inner = rect(i - g, i + g, j - g, j + g);
            let noise = (outer - inner) / n_train;
            if map[(i, j)] > alpha * noise {
                detections.push((i, j));
            }
        }
    }
    detections
}
