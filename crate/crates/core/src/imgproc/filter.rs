use crate::error::{Error, Result};
use crate::imgproc::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// Normalized 1D Gaussian of length `2 * radius + 1`.
///
/// The 2D kernel `exp(-(x^2 + y^2) / 2 sigma^2)` is separable, so smoothing
/// runs as one horizontal and one vertical pass of this kernel.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Result<Vec<f64>> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::invalid(format!(
            "gaussian sigma must be positive and finite, got {sigma}"
        )));
    }
    if radius < 1 {
        return Err(Error::invalid("gaussian radius must be at least 1"));
    }
    let two_var = 2.0 * sigma * sigma;
    let r = radius as f64;
    let mut kernel: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / two_var).exp()
        })
        .collect();
    let total: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= total;
    }
    Ok(kernel)
}

/// Per-output list of `(source index, weight)` taps along one axis.
///
/// Borders replicate the edge sample. When the kernel is longer than the
/// axis, taps that clamp onto the same source are folded together so the
/// cost is bounded by the axis length instead of the kernel length.
struct TapPlan {
    taps: Vec<Vec<(usize, f64)>>,
}

impl TapPlan {
    fn new(kernel: &[f64], len: usize) -> Self {
        Self::at(kernel, len, 0..len)
    }

    /// Taps for the listed output positions only.
    fn at(kernel: &[f64], len: usize, positions: impl Iterator<Item = usize>) -> Self {
        let r = (kernel.len() / 2) as isize;
        let last = len as isize - 1;
        let positions = positions.map(|i| i as isize);
        let taps = if kernel.len() <= len {
            positions
                .map(|i| {
                    kernel
                        .iter()
                        .enumerate()
                        .map(|(k, &w)| ((i + k as isize - r).clamp(0, last) as usize, w))
                        .collect()
                })
                .collect()
        } else {
            positions
                .map(|i| {
                    let mut folded = vec![0.0; len];
                    for (k, &w) in kernel.iter().enumerate() {
                        folded[(i + k as isize - r).clamp(0, last) as usize] += w;
                    }
                    folded.into_iter().enumerate().filter(|&(_, w)| w != 0.0).collect()
                })
                .collect()
        };
        TapPlan { taps }
    }
}

fn check_kernel(kernel: &[f64]) -> Result<()> {
    if kernel.len().is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "kernel length must be odd, got {}",
            kernel.len()
        )));
    }
    if kernel.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid("kernel contains non-finite weights"));
    }
    Ok(())
}

/// 1D convolution along `axis` with clamp-to-edge borders.
pub fn convolve(img: &Raster, kernel: &[f64], axis: Axis) -> Result<Raster> {
    check_kernel(kernel)?;
    Ok(match axis {
        Axis::Horizontal => convolve_rows(img, kernel),
        Axis::Vertical => convolve_cols(img, kernel),
    })
}

fn convolve_rows(img: &Raster, kernel: &[f64]) -> Raster {
    let (w, h) = (img.width(), img.height());
    let plan = TapPlan::new(kernel, w);
    let r = kernel.len() / 2;
    let mut out = Raster::zeros(w, h);
    for y in 0..h {
        let src = img.row(y);
        // a zero row stays zero under any kernel
        if src.iter().all(|&v| v == 0.0) {
            continue;
        }
        let dst = &mut out.data_mut()[y * w..(y + 1) * w];
        for (x, (d, taps)) in dst.iter_mut().zip(&plan.taps).enumerate() {
            // interior: the taps are the contiguous window, in kernel order
            let acc = if x >= r && x + r < w && kernel.len() <= w {
                src[x - r..=x + r]
                    .iter()
                    .zip(kernel)
                    .fold(0.0, |acc, (&v, &wt)| acc + wt * v)
            } else {
                taps.iter().fold(0.0, |acc, &(j, wt)| acc + wt * src[j])
            };
            *d = acc;
        }
    }
    out
}

fn convolve_cols(img: &Raster, kernel: &[f64]) -> Raster {
    let (w, h) = (img.width(), img.height());
    let plan = TapPlan::new(kernel, h);
    let zero_rows: Vec<bool> = (0..h).map(|y| img.row(y).iter().all(|&v| v == 0.0)).collect();
    let mut out = Raster::zeros(w, h);
    let data = img.data();
    for (y, taps) in plan.taps.iter().enumerate() {
        let dst = &mut out.data_mut()[y * w..(y + 1) * w];
        for &(j, wt) in taps {
            if zero_rows[j] {
                continue;
            }
            let src = &data[j * w..(j + 1) * w];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += wt * s;
            }
        }
    }
    out
}

/// Separable Gaussian smoothing: horizontal pass, then vertical pass.
pub fn gaussian_blur(img: &Raster, sigma: f64, radius: usize) -> Result<Raster> {
    let kernel = gaussian_kernel(sigma, radius)?;
    Ok(convolve_cols(&convolve_rows(img, &kernel), &kernel))
}

/// `gaussian_blur(img, sigma, radius)` evaluated only at `columns`;
/// `result[k][y]` is the blurred value at `(columns[k], y)`.
pub fn gaussian_blur_columns(img: &Raster, sigma: f64, radius: usize, columns: &[usize]) -> Result<Vec<Vec<f64>>> {
    let kernel = gaussian_kernel(sigma, radius)?;
    let (w, h) = (img.width(), img.height());
    if let Some(&c) = columns.iter().find(|&&c| c >= w) {
        return Err(Error::invalid(format!("column {c} outside a {w}-wide image")));
    }
    let row_plan = TapPlan::at(&kernel, w, columns.iter().copied());
    // horizontal pass at the requested columns, rows stored contiguously per column
    let mut horizontal = vec![vec![0.0; h]; columns.len()];
    let mut zero_rows = vec![true; h];
    for y in 0..h {
        let src = img.row(y);
        if src.iter().all(|&v| v == 0.0) {
            continue;
        }
        zero_rows[y] = false;
        for (k, taps) in row_plan.taps.iter().enumerate() {
            let mut acc = 0.0;
            for &(j, wt) in taps {
                acc += wt * src[j];
            }
            horizontal[k][y] = acc;
        }
    }
    let col_plan = TapPlan::new(&kernel, h);
    Ok(horizontal
        .iter()
        .map(|column| {
            col_plan
                .taps
                .iter()
                .map(|taps| {
                    let mut acc = 0.0;
                    for &(j, wt) in taps {
                        if !zero_rows[j] {
                            acc += wt * column[j];
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect())
}

/// Central differences in the interior, one-sided differences on the border.
pub fn spatial_gradient(img: &Raster) -> Result<(Raster, Raster)> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(Error::invalid(format!(
            "gradient needs at least 3x3 pixels, got {w}x{h}"
        )));
    }
    let mut gx = Raster::zeros(w, h);
    let mut gy = Raster::zeros(w, h);
    let d = img.data();
    {
        let gxd = gx.data_mut();
        for y in 0..h {
            let row = &d[y * w..(y + 1) * w];
            let out = &mut gxd[y * w..(y + 1) * w];
            out[0] = row[1] - row[0];
            for x in 1..w - 1 {
                out[x] = 0.5 * (row[x + 1] - row[x - 1]);
            }
            out[w - 1] = row[w - 1] - row[w - 2];
        }
    }
    {
        let gyd = gy.data_mut();
        for y in 0..h {
            let (up, down, scale) = if y == 0 {
                (0, 1, 1.0)
            } else if y == h - 1 {
                (h - 2, h - 1, 1.0)
            } else {
                (y - 1, y + 1, 0.5)
            };
            for x in 0..w {
                gyd[y * w + x] = scale * (d[down * w + x] - d[up * w + x]);
            }
        }
    }
    Ok((gx, gy))
}
