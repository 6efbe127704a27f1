//! Forward measurement models `y = H(x0) + z`, `z ~ N(0, sigma_y^2 I)`.
//!
//! Differentiable operators expose their true Jacobian-transpose product.
//! Quantisation, clipping and the toy JPEG codec are piecewise constant or
//! kinked; for those the misfit gradient is taken through a declared
//! differentiable surrogate `H'`, i.e. `2 J_{H'}(x)^T (H(x) - y)`.

pub mod jpeg;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{seeded, standard_normal};

pub use jpeg::ToyJpeg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Differentiability {
    Exact,
    Surrogate,
}

/// Differentiable stand-in used for the misfit gradient of a
/// non-differentiable operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surrogate {
    /// `H'(x) = x`.
    Identity,
    /// The operator's own pipeline with the rounding step removed.
    Pipeline,
}

impl FromStr for Surrogate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Surrogate::Identity),
            "pipeline" => Ok(Surrogate::Pipeline),
            other => Err(Error::Unknown {
                what: "surrogate",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixSource {
    Explicit(DMatrix<f64>),
    /// i.i.d. `N(0, 1/rows)` entries from a seeded stream.
    Random { rows: usize, seed: u64 },
}

impl MatrixSource {
    fn materialise(&self, cols: usize) -> Result<DMatrix<f64>> {
        match self {
            MatrixSource::Explicit(m) => {
                Error::check_dim(cols, m.ncols(), "matrix columns")?;
                if m.nrows() == 0 {
                    return Err(Error::InvalidParameter("matrix has no rows".into()));
                }
                Ok(m.clone())
            }
            MatrixSource::Random { rows, seed } => {
                if *rows == 0 {
                    return Err(Error::InvalidParameter("random matrix needs rows >= 1".into()));
                }
                let mut rng = seeded(*seed);
                let scale = 1.0 / (*rows as f64).sqrt();
                let values = standard_normal(&mut rng, rows * cols) * scale;
                Ok(DMatrix::from_row_slice(*rows, cols, values.as_slice()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskSpec {
    Indices(Vec<usize>),
    /// Keep a random subset of `round(keep_fraction * d)` coordinates.
    Random { keep_fraction: f64, seed: u64 },
    /// Remove a rectangle from the square image; keep everything else.
    Box {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// 1-D kernel applied along the flat vector.
    Taps(Vec<f64>),
    /// 2-D kernel applied to the square image.
    Taps2d(DMatrix<f64>),
    /// Normalised 2-D Gaussian of size `(2 radius + 1)^2`.
    Gaussian { sigma: f64, radius: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorSpec {
    Identity,
    DenseLinear(MatrixSource),
    Mask(MaskSpec),
    ConvBlur(KernelSpec),
    /// Box average over non-overlapping groups of `factor` entries, or
    /// `factor x factor` blocks when `image` is set.
    Downsample { factor: usize, image: bool },
    Quantize { n_bits: u32, surrogate: Surrogate },
    /// `min(max(gain x, 0), 1)`.
    Clip { gain: f64, surrogate: Surrogate },
    ToyJpeg { quality: u32, surrogate: Surrogate },
    /// Elementwise `|A x|`.
    Magnitude(MatrixSource),
}

impl OperatorSpec {
    pub fn type_name(&self) -> &'static str {
        match self {
            OperatorSpec::Identity => "identity",
            OperatorSpec::DenseLinear(_) => "dense-linear",
            OperatorSpec::Mask(_) => "mask",
            OperatorSpec::ConvBlur(_) => "conv-blur",
            OperatorSpec::Downsample { .. } => "downsample",
            OperatorSpec::Quantize { .. } => "quantize",
            OperatorSpec::Clip { .. } => "clip",
            OperatorSpec::ToyJpeg { .. } => "toy-jpeg",
            OperatorSpec::Magnitude(_) => "magnitude",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorConfig {
    pub dim: usize,
    pub spec: OperatorSpec,
    pub noise_std: f64,
    pub name: Option<String>,
}

impl OperatorConfig {
    pub fn new(dim: usize, spec: OperatorSpec, noise_std: f64) -> Self {
        OperatorConfig {
            dim,
            spec,
            noise_std,
            name: None,
        }
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Identity,
    Dense(DMatrix<f64>),
    Mask(Vec<usize>),
    /// True 2-D convolution with zero padding and "same" output size.
    /// 1-D kernels use `height == 1`.
    Conv {
        kernel: DMatrix<f64>,
        height: usize,
        width: usize,
    },
    Downsample {
        factor_rows: usize,
        factor_cols: usize,
        height: usize,
        width: usize,
    },
    Quantize {
        levels: f64,
        surrogate: Surrogate,
    },
    Clip {
        gain: f64,
        surrogate: Surrogate,
    },
    Jpeg {
        codec: ToyJpeg,
        surrogate: Surrogate,
    },
    Magnitude(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct ForwardOperator {
    name: String,
    input_dim: usize,
    output_dim: usize,
    noise_std: f64,
    kind: Kind,
    /// Upper bound on `||J||^2` (or `||J'||^2` for surrogates).
    jacobian_norm_sq: f64,
}

fn image_side(dim: usize, what: &str) -> Result<usize> {
    let side = (dim as f64).sqrt().round() as usize;
    if side * side != dim {
        return Err(Error::InvalidParameter(format!("{what} needs a square image, d = {dim}")));
    }
    Ok(side)
}

/// Constructs an operator from its declarative description.
pub fn build_operator(cfg: &OperatorConfig) -> Result<ForwardOperator> {
    let d = cfg.dim;
    if d == 0 {
        return Err(Error::InvalidParameter("operator input dimension is zero".into()));
    }
    if !(cfg.noise_std >= 0.0 && cfg.noise_std.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise_std {} must be >= 0", cfg.noise_std)));
    }
    let (kind, output_dim) = match &cfg.spec {
        OperatorSpec::Identity => (Kind::Identity, d),
        OperatorSpec::DenseLinear(src) => {
            let m = src.materialise(d)?;
            let rows = m.nrows();
            (Kind::Dense(m), rows)
        }
        OperatorSpec::Mask(mask) => {
            let keep = mask_indices(mask, d)?;
            let m = keep.len();
            (Kind::Mask(keep), m)
        }
        OperatorSpec::ConvBlur(kernel) => {
            let (kernel, height, width) = match kernel {
                KernelSpec::Taps(taps) => {
                    if taps.is_empty() {
                        return Err(Error::InvalidParameter("empty blur kernel".into()));
                    }
                    (DMatrix::from_row_slice(1, taps.len(), taps), 1, d)
                }
                KernelSpec::Taps2d(k) => {
                    let side = image_side(d, "2-D blur")?;
                    if k.is_empty() {
                        return Err(Error::InvalidParameter("empty blur kernel".into()));
                    }
                    (k.clone(), side, side)
                }
                KernelSpec::Gaussian { sigma, radius } => {
                    if !(*sigma > 0.0) {
                        return Err(Error::InvalidParameter(format!("blur sigma {sigma} must be positive")));
                    }
                    let side = image_side(d, "2-D blur")?;
                    (gaussian_kernel(*sigma, *radius), side, side)
                }
            };
            (Kind::Conv { kernel, height, width }, d)
        }
        OperatorSpec::Downsample { factor, image } => {
            let f = *factor;
            if f == 0 {
                return Err(Error::InvalidParameter("downsample factor must be >= 1".into()));
            }
            if *image {
                let side = image_side(d, "2-D downsample")?;
                if side % f != 0 {
                    return Err(Error::InvalidParameter(format!("factor {f} does not divide image side {side}")));
                }
                let out = (side / f) * (side / f);
                (
                    Kind::Downsample {
                        factor_rows: f,
                        factor_cols: f,
                        height: side,
                        width: side,
                    },
                    out,
                )
            } else {
                if !d.is_multiple_of(f) {
                    return Err(Error::InvalidParameter(format!("factor {f} does not divide d = {d}")));
                }
                (
                    Kind::Downsample {
                        factor_rows: 1,
                        factor_cols: f,
                        height: 1,
                        width: d,
                    },
                    d / f,
                )
            }
        }
        OperatorSpec::Quantize { n_bits, surrogate } => {
            if !(1..=32).contains(n_bits) {
                return Err(Error::InvalidParameter(format!("n_bits {n_bits} outside [1, 32]")));
            }
            let levels = ((1u64 << n_bits) - 1) as f64;
            (
                Kind::Quantize {
                    levels,
                    surrogate: *surrogate,
                },
                d,
            )
        }
        OperatorSpec::Clip { gain, surrogate } => {
            if !(*gain > 0.0 && gain.is_finite()) {
                return Err(Error::InvalidParameter(format!("clip gain {gain} must be positive")));
            }
            (
                Kind::Clip {
                    gain: *gain,
                    surrogate: *surrogate,
                },
                d,
            )
        }
        OperatorSpec::ToyJpeg { quality, surrogate } => {
            let side = image_side(d, "toy-jpeg")?;
            (
                Kind::Jpeg {
                    codec: ToyJpeg::new(side, *quality)?,
                    surrogate: *surrogate,
                },
                d,
            )
        }
        OperatorSpec::Magnitude(src) => {
            let m = src.materialise(d)?;
            let rows = m.nrows();
            (Kind::Magnitude(m), rows)
        }
    };
    let mut op = ForwardOperator {
        name: cfg.name.clone().unwrap_or_else(|| cfg.spec.type_name().to_string()),
        input_dim: d,
        output_dim,
        noise_std: cfg.noise_std,
        kind,
        jacobian_norm_sq: 1.0,
    };
    op.jacobian_norm_sq = op.estimate_jacobian_norm_sq();
    Ok(op)
}

fn mask_indices(mask: &MaskSpec, d: usize) -> Result<Vec<usize>> {
    let keep = match mask {
        MaskSpec::Indices(idx) => {
            let mut idx = idx.clone();
            idx.sort_unstable();
            idx.dedup();
            if let Some(bad) = idx.iter().find(|&&i| i >= d) {
                return Err(Error::InvalidParameter(format!("mask index {bad} out of range for d = {d}")));
            }
            idx
        }
        MaskSpec::Random { keep_fraction, seed } => {
            if !(*keep_fraction > 0.0 && *keep_fraction <= 1.0) {
                return Err(Error::InvalidParameter(format!("keep fraction {keep_fraction} outside (0, 1]")));
            }
            let count = ((keep_fraction * d as f64).round() as usize).max(1);
            let mut all: Vec<usize> = (0..d).collect();
            all.shuffle(&mut seeded(*seed));
            let mut idx = all[..count].to_vec();
            idx.sort_unstable();
            idx
        }
        MaskSpec::Box {
            top,
            left,
            height,
            width,
        } => {
            let side = image_side(d, "box mask")?;
            if top + height > side || left + width > side {
                return Err(Error::InvalidParameter("box mask exceeds image".into()));
            }
            (0..d)
                .filter(|&i| {
                    let (r, c) = (i / side, i % side);
                    !(r >= *top && r < top + height && c >= *left && c < left + width)
                })
                .collect()
        }
    };
    if keep.is_empty() {
        return Err(Error::InvalidParameter("mask keeps no coordinates".into()));
    }
    Ok(keep)
}

fn gaussian_kernel(sigma: f64, radius: usize) -> DMatrix<f64> {
    let n = 2 * radius + 1;
    let r = radius as f64;
    let mut k = DMatrix::from_fn(n, n, |i, j| {
        let (di, dj) = (i as f64 - r, j as f64 - r);
        (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp()
    });
    let total = k.sum();
    k /= total;
    k
}

impl ForwardOperator {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn differentiability(&self) -> Differentiability {
        match self.kind {
            Kind::Quantize { .. } | Kind::Clip { .. } | Kind::Jpeg { .. } => Differentiability::Surrogate,
            _ => Differentiability::Exact,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(
            self.kind,
            Kind::Identity | Kind::Dense(_) | Kind::Mask(_) | Kind::Conv { .. } | Kind::Downsample { .. }
        )
    }

    /// Upper bound on the squared spectral norm of the (surrogate) Jacobian.
    pub fn jacobian_norm_sq(&self) -> f64 {
        self.jacobian_norm_sq
    }

    /// `H(x)`, noiseless.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Error::check_dim(self.input_dim, x.len(), "operator input")?;
        Ok(match &self.kind {
            Kind::Identity => x.clone(),
            Kind::Dense(a) => a * x,
            Kind::Mask(keep) => DVector::from_iterator(keep.len(), keep.iter().map(|&i| x[i])),
            Kind::Conv { kernel, height, width } => conv(kernel, *height, *width, x, false),
            Kind::Downsample {
                factor_rows,
                factor_cols,
                height,
                width,
            } => downsample(*factor_rows, *factor_cols, *height, *width, x),
            Kind::Quantize { levels, .. } => x.map(|v| quantize(v, *levels)),
            Kind::Clip { gain, .. } => x.map(|v| (gain * v).clamp(0.0, 1.0)),
            Kind::Jpeg { codec, .. } => codec.roundtrip(x),
            Kind::Magnitude(a) => (a * x).abs(),
        })
    }

    /// `J(x)^T v`, using the declared surrogate for non-differentiable
    /// operators.
    pub fn jacobian_transpose_apply(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        Error::check_dim(self.input_dim, x.len(), "operator input")?;
        Error::check_dim(self.output_dim, v.len(), "operator cotangent")?;
        Ok(match &self.kind {
            Kind::Identity => v.clone(),
            Kind::Dense(a) => a.tr_mul(v),
            Kind::Mask(keep) => {
                let mut out = DVector::zeros(self.input_dim);
                for (&i, &val) in keep.iter().zip(v.iter()) {
                    out[i] = val;
                }
                out
            }
            Kind::Conv { kernel, height, width } => conv(kernel, *height, *width, v, true),
            Kind::Downsample {
                factor_rows,
                factor_cols,
                height,
                width,
            } => upsample_adjoint(*factor_rows, *factor_cols, *height, *width, v),
            Kind::Quantize { surrogate, .. } => match surrogate {
                Surrogate::Identity => v.clone(),
                Surrogate::Pipeline => v.zip_map(x, |g, xi| if (0.0..=1.0).contains(&xi) { g } else { 0.0 }),
            },
            Kind::Clip { gain, surrogate } => match surrogate {
                Surrogate::Identity => v.clone(),
                Surrogate::Pipeline => v.zip_map(x, |g, xi| {
                    let s = gain * xi;
                    if s > 0.0 && s < 1.0 {
                        gain * g
                    } else {
                        0.0
                    }
                }),
            },
            Kind::Jpeg { surrogate, .. } => match surrogate {
                Surrogate::Identity => v.clone(),
                // without rounding the codec reduces to clamping the input
                Surrogate::Pipeline => v.zip_map(x, |g, xi| if (0.0..=1.0).contains(&xi) { g } else { 0.0 }),
            },
            Kind::Magnitude(a) => {
                let ax = a * x;
                let signed = v.zip_map(&ax, |g, s| g * s.signum() * if s == 0.0 { 0.0 } else { 1.0 });
                a.tr_mul(&signed)
            }
        })
    }

    /// `H(x) + sigma_y * eps`.
    pub fn measure<R: Rng + ?Sized>(&self, x_true: &DVector<f64>, rng: &mut R) -> Result<Measurement> {
        let clean = self.apply(x_true)?;
        let noise = standard_normal(rng, self.output_dim);
        let values = if self.noise_std == 0.0 {
            clean
        } else {
            clean + noise * self.noise_std
        };
        Ok(Measurement {
            values,
            operator_name: self.name.clone(),
            noise_std: self.noise_std,
            seed: None,
        })
    }

    /// `||y - H(x)||^2`.
    pub fn misfit(&self, x: &DVector<f64>, y: &Measurement) -> Result<f64> {
        Error::check_dim(self.output_dim, y.values.len(), "measurement")?;
        Ok((&y.values - self.apply(x)?).norm_squared())
    }

    /// Gradient of [`Self::misfit`]: `2 J^T (H(x) - y)`, through the
    /// surrogate Jacobian where `H` is not differentiable.
    pub fn misfit_gradient(&self, x: &DVector<f64>, y: &Measurement) -> Result<DVector<f64>> {
        Error::check_dim(self.output_dim, y.values.len(), "measurement")?;
        let residual = self.apply(x)? - &y.values;
        Ok(self.jacobian_transpose_apply(x, &residual)? * 2.0)
    }

    /// Dense `m x d` matrix of a linear operator, built column by column.
    pub fn linear_matrix(&self) -> Result<DMatrix<f64>> {
        if !self.is_linear() {
            return Err(Error::NotLinear {
                operator: self.name.clone(),
            });
        }
        if let Kind::Dense(a) = &self.kind {
            return Ok(a.clone());
        }
        let d = self.input_dim;
        let mut m = DMatrix::zeros(self.output_dim, d);
        let mut e = DVector::zeros(d);
        for j in 0..d {
            e[j] = 1.0;
            m.set_column(j, &self.apply(&e)?);
            e[j] = 0.0;
        }
        Ok(m)
    }

    fn estimate_jacobian_norm_sq(&self) -> f64 {
        match &self.kind {
            Kind::Identity | Kind::Mask(_) => 1.0,
            Kind::Quantize { .. } | Kind::Jpeg { .. } => 1.0,
            Kind::Clip { gain, surrogate } => match surrogate {
                Surrogate::Identity => 1.0,
                Surrogate::Pipeline => gain * gain,
            },
            Kind::Dense(a) | Kind::Magnitude(a) => power_iteration(|v| a.tr_mul(&(a * v)), a.ncols()),
            _ => {
                let x = DVector::zeros(self.input_dim);
                power_iteration(
                    |v| {
                        let hv = self.apply(v).expect("dimension checked");
                        self.jacobian_transpose_apply(&x, &hv).expect("dimension checked")
                    },
                    self.input_dim,
                )
            }
        }
    }
}

fn power_iteration(normal_op: impl Fn(&DVector<f64>) -> DVector<f64>, dim: usize) -> f64 {
    let mut v = DVector::from_fn(dim, |i, _| 1.0 + 0.1 * ((i * 7919) % 13) as f64);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..200 {
        let w = normal_op(&v);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = norm;
        v = w / norm;
    }
    // slack for the unconverged tail
    estimate * 1.01
}

fn quantize(v: f64, levels: f64) -> f64 {
    (v.clamp(0.0, 1.0) * levels + 0.5).floor() / levels
}

fn conv(kernel: &DMatrix<f64>, height: usize, width: usize, x: &DVector<f64>, adjoint: bool) -> DVector<f64> {
    let (kh, kw) = (kernel.nrows(), kernel.ncols());
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = DVector::zeros(height * width);
    for i in 0..height as isize {
        for j in 0..width as isize {
            for a in 0..kh as isize {
                let si = i + ch - a;
                if si < 0 || si >= height as isize {
                    continue;
                }
                for b in 0..kw as isize {
                    let sj = j + cw - b;
                    if sj < 0 || sj >= width as isize {
                        continue;
                    }
                    let k = kernel[(a as usize, b as usize)];
                    let dst = i as usize * width + j as usize;
                    let src = si as usize * width + sj as usize;
                    if adjoint {
                        out[src] += k * x[dst];
                    } else {
                        out[dst] += k * x[src];
                    }
                }
            }
        }
    }
    out
}

fn downsample(fr: usize, fc: usize, height: usize, width: usize, x: &DVector<f64>) -> DVector<f64> {
    let (oh, ow) = (height / fr, width / fc);
    let scale = 1.0 / (fr * fc) as f64;
    DVector::from_fn(oh * ow, |o, _| {
        let (bi, bj) = (o / ow, o % ow);
        let mut acc = 0.0;
        for r in 0..fr {
            for c in 0..fc {
                acc += x[(bi * fr + r) * width + bj * fc + c];
            }
        }
        acc * scale
    })
}

fn upsample_adjoint(fr: usize, fc: usize, height: usize, width: usize, v: &DVector<f64>) -> DVector<f64> {
    let ow = width / fc;
    let scale = 1.0 / (fr * fc) as f64;
    DVector::from_fn(height * width, |i, _| {
        let (r, c) = (i / width, i % width);
        v[(r / fr) * ow + c / fc] * scale
    })
}

/// Observed data `y` together with the operator that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub values: DVector<f64>,
    pub operator_name: String,
    pub noise_std: f64,
    pub seed: Option<u64>,
}

impl Measurement {
    pub fn new(values: DVector<f64>, operator_name: impl Into<String>, noise_std: f64) -> Self {
        Measurement {
            values,
            operator_name: operator_name.into(),
            noise_std,
            seed: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// CSV vector file: a `#` header line with `operator_name`, `m`,
    /// `sigma_y` and `seed`, then an `index,value` table.
    pub fn to_csv(&self) -> String {
        let seed = self.seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into());
        let mut out = format!(
            "# operator_name={},m={},sigma_y={},seed={}\nindex,value\n",
            self.operator_name,
            self.values.len(),
            self.noise_std,
            seed
        );
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{i},{v}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidParameter(format!("measurement file: {msg}"));
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix('#'))
            .ok_or_else(|| bad("missing '#' header".into()))?;
        let mut name = None;
        let mut m = None;
        let mut sigma = None;
        let mut seed = None;
        for field in header.trim().split(',') {
            let (key, value) = field.split_once('=').ok_or_else(|| bad(format!("bad header field {field:?}")))?;
            match key.trim() {
                "operator_name" => name = Some(value.to_string()),
                "m" => m = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "sigma_y" => sigma = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "seed" => seed = value.parse::<u64>().ok(),
                other => return Err(bad(format!("unknown header key {other}"))),
            }
        }
        let values = read_vector_lines(lines)?;
        let m = m.ok_or_else(|| bad("header lacks m".into()))?;
        Error::check_dim(m, values.len(), "measurement file length")?;
        Ok(Measurement {
            values,
            operator_name: name.ok_or_else(|| bad("header lacks operator_name".into()))?,
            noise_std: sigma.ok_or_else(|| bad("header lacks sigma_y".into()))?,
            seed,
        })
    }
}

/// Reads a vector from CSV lines. Accepts `index,value` rows, bare values,
/// an optional header row and `#` comments.
pub fn read_vector_lines<'a>(lines: impl Iterator<Item = &'a str>) -> Result<DVector<f64>> {
    let mut values = Vec::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == "index,value" || line == "value" {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or(line).trim();
        let v: f64 = field
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("vector file: cannot parse {line:?}")))?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::Empty("vector file"));
    }
    Ok(DVector::from_vec(values))
}

impl fmt::Display for ForwardOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} -> {}, sigma_y = {})",
            self.name, self.input_dim, self.output_dim, self.noise_std
        )
    }
}
