use crate::error::{Error, Result};
use crate::model::AttentionMap;

/// Sample position of output cell `i` of `g` along an axis of length `t`
/// (corners aligned).
fn source_coord(i: usize, g: usize, t: usize) -> f64 {
    if g == 1 {
        (t - 1) as f64 / 2.0
    } else {
        i as f64 * (t - 1) as f64 / (g - 1) as f64
    }
}

/// Bilinear resampling of `map` onto a `g_out x g_in` grid, flattened
/// row-major, with every output row renormalized to sum to one.
pub fn project_to_grid(map: &AttentionMap, g_out: usize, g_in: usize) -> Result<Vec<f64>> {
    resample(&map.matrix, map.target_len, map.source_len, g_out, g_in)
}

pub fn resample(matrix: &[f64], rows: usize, cols: usize, g_out: usize, g_in: usize) -> Result<Vec<f64>> {
    if rows == 0 || cols == 0 || matrix.len() != rows * cols {
        return Err(Error::Invalid(format!("cannot resample a {rows}x{cols} matrix of {} values", matrix.len())));
    }
    if g_out == 0 || g_in == 0 {
        return Err(Error::Invalid(format!("grid {g_out}x{g_in} must be at least 1x1")));
    }
    let at = |r: usize, c: usize| matrix[r * cols + c];
    let mut out = vec![0.0; g_out * g_in];
    for i in 0..g_out {
        let y = source_coord(i, g_out, rows);
        let y0 = (y.floor() as usize).min(rows - 1);
        let y1 = (y0 + 1).min(rows - 1);
        let fy = y - y0 as f64;
        for j in 0..g_in {
            let x = source_coord(j, g_in, cols);
            let x0 = (x.floor() as usize).min(cols - 1);
            let x1 = (x0 + 1).min(cols - 1);
            let fx = x - x0 as f64;
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            out[i * g_in + j] = top * (1.0 - fy) + bottom * fy;
        }
        let row = &mut out[i * g_in..(i + 1) * g_in];
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    Ok(out)
}
