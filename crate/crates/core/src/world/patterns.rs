// SPDX-License-Identifier: Apache-2.0

//! Procedural template generators.

use serde::{Deserialize, Serialize};

use crate::tensor::{Shape, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Horizontal,
    Vertical,
    Diagonal,
}

/// Linear ramp from `from` to `to` along `axis`, plus a per-channel offset.
pub fn gradient(shape: Shape, axis: Axis, from: f64, to: f64, channel_offsets: &[f64]) -> Tensor3 {
    let frac = |n: usize, k: usize| if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
    Tensor3::from_fn(shape, |c, i, j| {
        let u = match axis {
            Axis::Horizontal => frac(shape.width, j),
            Axis::Vertical => frac(shape.height, i),
            Axis::Diagonal => {
                let span = shape.height + shape.width - 2;
                if span == 0 {
                    0.0
                } else {
                    (i + j) as f64 / span as f64
                }
            }
        };
        from + (to - from) * u + channel_offsets.get(c).copied().unwrap_or(0.0)
    })
}

/// Rectangle `[row, col, rows, cols]` filled with a pixel checker of `high`
/// (even `i + j`) and `low` (odd), `outside` everywhere else.
pub fn block(shape: Shape, rect: [usize; 4], high: f64, low: f64, outside: f64) -> Tensor3 {
    let [r0, c0, nr, nc] = rect;
    Tensor3::from_fn(shape, |_, i, j| {
        if (r0..r0 + nr).contains(&i) && (c0..c0 + nc).contains(&j) {
            if (i + j) % 2 == 0 {
                high
            } else {
                low
            }
        } else {
            outside
        }
    })
}

/// Checkerboard of `cell×cell` squares alternating `high` and `low`.
pub fn checker(shape: Shape, cell: usize, high: f64, low: f64) -> Tensor3 {
    let cell = cell.max(1);
    Tensor3::from_fn(shape, |_, i, j| {
        if (i / cell + j / cell) % 2 == 0 {
            high
        } else {
            low
        }
    })
}
