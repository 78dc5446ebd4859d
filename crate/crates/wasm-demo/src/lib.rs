//! Browser explorer for the Concrete distribution.
//!
//! Three views, each a plain function with a thin `wasm_bindgen` wrapper:
//!
//! - [`simplex_heatmap`]: log-density of a 3-state Concrete over an
//!   equilateral triangle drawn on a canvas.
//! - [`simplex_samples`]: reparameterized samples projected onto the same
//!   triangle, tagged with their rounded state.
//! - [`binary_view`]: Binary Concrete density next to a sample histogram.

use concrete_core::noise::RngStream;
use concrete_core::relaxations::{self as rx, LocationVector, RelaxError, SimplexPoint, Temperature};
use wasm_bindgen::prelude::*;

/// Canvas geometry: vertex 0 bottom-left, vertex 1 bottom-right, vertex 2
/// top, inset by `MARGIN` pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangle {
    width: f64,
    height: f64,
}

const MARGIN: f64 = 8.0;

impl Triangle {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width: width as f64,
            height: height as f64,
        }
    }

    fn vertices(&self) -> [(f64, f64); 3] {
        let side = (self.width - 2.0 * MARGIN).min((self.height - 2.0 * MARGIN) * 2.0 / 3f64.sqrt());
        let h = side * 3f64.sqrt() / 2.0;
        let x0 = (self.width - side) / 2.0;
        let y0 = (self.height + h) / 2.0;
        [(x0, y0), (x0 + side, y0), (x0 + side / 2.0, y0 - h)]
    }

    pub fn project(&self, bary: &[f64]) -> (f64, f64) {
        let v = self.vertices();
        (0..3).fold((0.0, 0.0), |(x, y), k| (x + bary[k] * v[k].0, y + bary[k] * v[k].1))
    }

    /// Barycentric coordinates of a canvas point; `None` outside the
    /// triangle.
    pub fn barycentric(&self, px: f64, py: f64) -> Option<[f64; 3]> {
        let [a, b, c] = self.vertices();
        let det = (b.1 - c.1) * (a.0 - c.0) + (c.0 - b.0) * (a.1 - c.1);
        let l0 = ((b.1 - c.1) * (px - c.0) + (c.0 - b.0) * (py - c.1)) / det;
        let l1 = ((c.1 - a.1) * (px - c.0) + (a.0 - c.0) * (py - c.1)) / det;
        let l2 = 1.0 - l0 - l1;
        (l0 > 0.0 && l1 > 0.0 && l2 > 0.0).then_some([l0, l1, l2])
    }
}

fn location(alphas: &[f64], arity: usize) -> Result<LocationVector, RelaxError> {
    if alphas.len() != arity {
        return Err(RelaxError::ArityMismatch {
            expected: arity,
            found: alphas.len(),
        });
    }
    LocationVector::from_alphas(alphas)
}

/// Row-major `height × width` log-densities; NaN outside the triangle.
pub fn simplex_heatmap(alphas: &[f64], lambda: f64, width: usize, height: usize) -> Result<Vec<f64>, RelaxError> {
    let a = location(alphas, 3)?;
    let lam = Temperature::new(lambda)?;
    let tri = Triangle::new(width, height);
    let mut out = Vec::with_capacity(width * height);
    for py in 0..height {
        for px in 0..width {
            let v = tri
                .barycentric(px as f64 + 0.5, py as f64 + 0.5)
                .and_then(|b| SimplexPoint::new(b.to_vec()).ok())
                .and_then(|x| rx::concrete_log_density(&a, lam, &x).ok())
                .unwrap_or(f64::NAN);
            out.push(v);
        }
    }
    Ok(out)
}

/// `count` samples as flattened `(x, y, state)` triples in canvas pixels,
/// where `state` is the rounded (argmax) state.
pub fn simplex_samples(
    alphas: &[f64],
    lambda: f64,
    count: usize,
    seed: u64,
    width: usize,
    height: usize,
) -> Result<Vec<f64>, RelaxError> {
    let a = location(alphas, 3)?;
    let lam = Temperature::new(lambda)?;
    let tri = Triangle::new(width, height);
    let mut rng = RngStream::new(seed, 0);
    let mut out = Vec::with_capacity(3 * count);
    for _ in 0..count {
        let x = rx::concrete_sample(&a, lam, &mut rng);
        let (px, py) = tri.project(x.coords());
        out.extend([px, py, rx::round_to_onehot(&x).index() as f64]);
    }
    Ok(out)
}

/// Binary Concrete on `bins` equal cells of (0, 1): the first `bins`
/// entries are the density at cell centres, the next `bins` the histogram
/// density of `samples` draws.
pub fn binary_view(log_alpha: f64, lambda: f64, bins: usize, samples: usize, seed: u64) -> Result<Vec<f64>, RelaxError> {
    let lam = Temperature::new(lambda)?;
    let width = 1.0 / bins as f64;
    let mut out: Vec<f64> = (0..bins)
        .map(|i| {
            let x = (i as f64 + 0.5) * width;
            rx::binary_concrete_log_density(log_alpha, lam, x).map_or(0.0, f64::exp)
        })
        .collect();
    let mut counts = vec![0usize; bins];
    let mut rng = RngStream::new(seed, 1);
    for _ in 0..samples {
        let x = rx::binary_concrete_sample(log_alpha, lam, &mut rng);
        counts[((x * bins as f64) as usize).min(bins - 1)] += 1;
    }
    out.extend(counts.iter().map(|&c| c as f64 / (samples.max(1) as f64 * width)));
    Ok(out)
}

fn js(e: RelaxError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = simplexHeatmap)]
pub fn simplex_heatmap_js(alphas: &[f64], lambda: f64, width: usize, height: usize) -> Result<Vec<f64>, JsError> {
    simplex_heatmap(alphas, lambda, width, height).map_err(js)
}

#[wasm_bindgen(js_name = simplexSamples)]
pub fn simplex_samples_js(
    alphas: &[f64],
    lambda: f64,
    count: usize,
    seed: u64,
    width: usize,
    height: usize,
) -> Result<Vec<f64>, JsError> {
    simplex_samples(alphas, lambda, count, seed, width, height).map_err(js)
}

#[wasm_bindgen(js_name = binaryView)]
pub fn binary_view_js(log_alpha: f64, lambda: f64, bins: usize, samples: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    binary_view(log_alpha, lambda, bins, samples, seed).map_err(js)
}
