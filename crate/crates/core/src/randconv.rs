//! Random-weight convolutional feature extractor.
//!
//! A network is one to three stacked layers, each doing
//! convolution with a random filter bank → clamp to `[0, 1]` → Lp pooling →
//! optional divisive normalization. Only the architecture is chosen; the
//! weights stay random.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, FaceImage};

pub const INPUT_SIZES: [InputSize; 4] = [
    InputSize::Pixels(64),
    InputSize::Pixels(128),
    InputSize::Pixels(256),
    InputSize::Original,
];
pub const LAYER_COUNTS: [usize; 3] = [1, 2, 3];
pub const FILTER_COUNTS: [usize; 4] = [32, 64, 128, 256];
pub const FILTER_SIZES: [usize; 4] = [3, 5, 7, 9];
pub const POOL_EXPONENTS: [u32; 3] = [1, 2, 10];
pub const POOL_STRIDES: [usize; 4] = [1, 2, 4, 8];
pub const NORMALIZE_CHOICES: [bool; 2] = [false, true];

pub const MAX_LAYERS: usize = 3;

const ACTIVATION_RANGE: (f64, f64) = (0.0, 1.0);
const STD_FLOOR: f64 = 1e-6;

/// Side length the network resizes its input to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputSize {
    Pixels(usize),
    /// Keep the gallery's native size.
    Original,
}

impl fmt::Display for InputSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputSize::Pixels(n) => write!(f, "{n}"),
            InputSize::Original => f.write_str("original"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub num_filters: usize,
    pub filter_size: usize,
    pub pool_exponent: u32,
    pub pool_stride: usize,
    pub normalize: bool,
}

impl LayerSpec {
    pub fn validate(&self, layer: usize) -> Result<()> {
        let bad = |what: &str, v: String| {
            Err(Error::invalid(format!("layer {layer}: {what} {v} outside its domain")))
        };
        if !FILTER_COUNTS.contains(&self.num_filters) {
            return bad("filter count", self.num_filters.to_string());
        }
        if !FILTER_SIZES.contains(&self.filter_size) {
            return bad("filter size", self.filter_size.to_string());
        }
        if !POOL_EXPONENTS.contains(&self.pool_exponent) {
            return bad("pool exponent", self.pool_exponent.to_string());
        }
        if !POOL_STRIDES.contains(&self.pool_stride) {
            return bad("pool stride", self.pool_stride.to_string());
        }
        Ok(())
    }

    /// Side of the square pooling window: `max(2, stride)`.
    pub fn pool_window(&self) -> usize {
        pool_window(self.pool_stride)
    }
}

pub fn pool_window(stride: usize) -> usize {
    stride.max(2)
}

/// A point of the architecture search space plus the seed of its filters.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchitectureSpec {
    pub input_size: InputSize,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
}

impl ArchitectureSpec {
    pub fn validate(&self) -> Result<()> {
        if !INPUT_SIZES.contains(&self.input_size) {
            return Err(Error::invalid(format!(
                "input size {} outside its domain",
                self.input_size
            )));
        }
        if self.layers.is_empty() || self.layers.len() > MAX_LAYERS {
            return Err(Error::invalid(format!(
                "networks have 1 to {MAX_LAYERS} layers, got {}",
                self.layers.len()
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.validate(i)?;
        }
        Ok(())
    }

    /// Side lengths the network sees for a gallery of `native` (w, h) images.
    pub fn input_dims(&self, native: (usize, usize)) -> (usize, usize) {
        match self.input_size {
            InputSize::Pixels(n) => (n, n),
            InputSize::Original => native,
        }
    }

    /// Multi-line `key=value` form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.fields() {
            out.push_str(&k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Single-line `key=value` form, fields separated by spaces.
    pub fn to_line(&self) -> String {
        self.fields()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn fields(&self) -> Vec<(String, String)> {
        let mut f = vec![
            ("input_size".to_string(), self.input_size.to_string()),
            ("seed".to_string(), self.seed.to_string()),
            ("layers".to_string(), self.layers.len().to_string()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            f.push((format!("layer{i}.filters"), l.num_filters.to_string()));
            f.push((format!("layer{i}.filter_size"), l.filter_size.to_string()));
            f.push((format!("layer{i}.pool_exponent"), l.pool_exponent.to_string()));
            f.push((format!("layer{i}.pool_stride"), l.pool_stride.to_string()));
            f.push((
                format!("layer{i}.normalize"),
                if l.normalize { "yes" } else { "no" }.to_string(),
            ));
        }
        f
    }
}

impl fmt::Display for ArchitectureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_line())
    }
}

impl FromStr for ArchitectureSpec {
    type Err = Error;

    /// Parses either text form. Lines starting with `#` are comments; unknown
    /// keys (for example `status=` in search logs) are ignored.
    fn from_str(s: &str) -> Result<Self> {
        let parse_err = |msg: String| Error::Parse {
            path: "<spec>".into(),
            line: 0,
            column: 0,
            message: msg,
        };
        let mut input_size = None;
        let mut seed = None;
        let mut count = None;
        let mut layers: Vec<[Option<String>; 5]> = vec![Default::default(); MAX_LAYERS];
        for line in s.lines().filter(|l| !l.trim_start().starts_with('#')) {
            for token in line.split_whitespace() {
                let (key, value) = token
                    .split_once('=')
                    .ok_or_else(|| parse_err(format!("expected key=value, got {token:?}")))?;
                match key {
                    "input_size" => {
                        input_size = Some(if value == "original" {
                            InputSize::Original
                        } else {
                            InputSize::Pixels(value.parse().map_err(|_| {
                                parse_err(format!("bad input_size {value:?}"))
                            })?)
                        })
                    }
                    "seed" => {
                        seed = Some(value.parse::<u64>().map_err(|_| parse_err(format!("bad seed {value:?}")))?)
                    }
                    "layers" => {
                        count = Some(value.parse::<usize>().map_err(|_| parse_err(format!("bad layers {value:?}")))?)
                    }
                    _ => {
                        if let Some(rest) = key.strip_prefix("layer") {
                            let (idx, field) = rest
                                .split_once('.')
                                .ok_or_else(|| parse_err(format!("bad key {key:?}")))?;
                            let idx: usize = idx
                                .parse()
                                .map_err(|_| parse_err(format!("bad layer index in {key:?}")))?;
                            if idx >= MAX_LAYERS {
                                return Err(parse_err(format!("layer index {idx} too large")));
                            }
                            let slot = match field {
                                "filters" => 0,
                                "filter_size" => 1,
                                "pool_exponent" => 2,
                                "pool_stride" => 3,
                                "normalize" => 4,
                                _ => return Err(parse_err(format!("unknown layer field {field:?}"))),
                            };
                            layers[idx][slot] = Some(value.to_string());
                        }
                    }
                }
            }
        }
        let count = count.ok_or_else(|| parse_err("missing layers".into()))?;
        if count == 0 || count > MAX_LAYERS {
            return Err(parse_err(format!("layers must be 1..={MAX_LAYERS}")));
        }
        let mut specs = Vec::with_capacity(count);
        for (i, fields) in layers.iter().take(count).enumerate() {
            let get = |slot: usize, name: &str| {
                fields[slot]
                    .clone()
                    .ok_or_else(|| parse_err(format!("missing layer{i}.{name}")))
            };
            let num = |slot: usize, name: &str| -> Result<usize> {
                get(slot, name)?
                    .parse()
                    .map_err(|_| parse_err(format!("bad layer{i}.{name}")))
            };
            let normalize = match get(4, "normalize")?.as_str() {
                "yes" | "true" => true,
                "no" | "false" => false,
                other => return Err(parse_err(format!("bad layer{i}.normalize {other:?}"))),
            };
            specs.push(LayerSpec {
                num_filters: num(0, "filters")?,
                filter_size: num(1, "filter_size")?,
                pool_exponent: num(2, "pool_exponent")? as u32,
                pool_stride: num(3, "pool_stride")?,
                normalize,
            });
        }
        let spec = ArchitectureSpec {
            input_size: input_size.ok_or_else(|| parse_err("missing input_size".into()))?,
            layers: specs,
            seed: seed.ok_or_else(|| parse_err("missing seed".into()))?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Dense `height × width × channels` activations, channel-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch {
                expected: height * width * channels,
                actual: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }
}

/// Kernels of one layer; each kernel is `size × size × in_channels`, laid out
/// like [`Tensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub size: usize,
    pub in_channels: usize,
    pub kernels: Vec<Vec<f64>>,
}

/// Draws `num_filters` kernels uniformly on `[−1, 1]` from a generator keyed
/// by `(seed, layer_index)`, then makes each one zero-mean and unit-norm.
pub fn make_filter_bank(spec: &LayerSpec, in_channels: usize, seed: u64, layer_index: usize) -> FilterBank {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(layer_index as u64);
    let len = spec.filter_size * spec.filter_size * in_channels;
    let kernels = (0..spec.num_filters)
        .map(|_| {
            let mut k: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let mean = k.iter().sum::<f64>() / len as f64;
            k.iter_mut().for_each(|v| *v -= mean);
            let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                k.iter_mut().for_each(|v| *v /= norm);
            }
            k
        })
        .collect();
    FilterBank {
        size: spec.filter_size,
        in_channels,
        kernels,
    }
}

/// Valid (unpadded) cross-correlation with every kernel of the bank.
pub fn convolve(input: &Tensor, bank: &FilterBank, layer: usize) -> Result<Tensor> {
    let k = bank.size;
    if input.channels != bank.in_channels {
        return Err(Error::DimensionMismatch {
            expected: bank.in_channels,
            actual: input.channels,
        });
    }
    if input.height < k || input.width < k {
        return Err(Error::Shape {
            layer,
            reason: format!(
                "{}x{} input is smaller than the {k}x{k} filters",
                input.width, input.height
            ),
        });
    }
    let oh = input.height - k + 1;
    let ow = input.width - k + 1;
    let nf = bank.kernels.len();
    let c = input.channels;
    let span = k * c;
    let mut out = Tensor::zeros(oh, ow, nf);
    for y in 0..oh {
        for x in 0..ow {
            let dst = &mut out.data[(y * ow + x) * nf..(y * ow + x + 1) * nf];
            for ky in 0..k {
                let start = ((y + ky) * input.width + x) * c;
                let window = &input.data[start..start + span];
                for (d, kernel) in dst.iter_mut().zip(&bank.kernels) {
                    let row = &kernel[ky * span..(ky + 1) * span];
                    *d += window.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    }
    Ok(out)
}

/// Elementwise clamp to `[lo, hi]`.
pub fn activate(t: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
    if !(lo < hi) {
        return Err(Error::invalid(format!("activation range needs lo < hi, got [{lo}, {hi}]")));
    }
    let mut out = t.clone();
    out.data.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    Ok(out)
}

/// Per-channel `(Σ |x|^p)^(1/p)` over `w × w` windows at stride `s`,
/// `w = max(2, s)`.
pub fn lp_pool(t: &Tensor, exponent: u32, stride: usize, layer: usize) -> Result<Tensor> {
    if exponent == 0 || stride == 0 {
        return Err(Error::invalid("pool exponent and stride must be positive"));
    }
    let w = pool_window(stride);
    if t.height < w || t.width < w {
        return Err(Error::Shape {
            layer,
            reason: format!(
                "{}x{} activations are smaller than the {w}x{w} pooling window",
                t.width, t.height
            ),
        });
    }
    let oh = (t.height - w) / stride + 1;
    let ow = (t.width - w) / stride + 1;
    let c = t.channels;
    let mut out = Tensor::zeros(oh, ow, c);
    let mut acc = vec![0.0; c];
    for oy in 0..oh {
        for ox in 0..ow {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for wy in 0..w {
                for wx in 0..w {
                    let base = ((oy * stride + wy) * t.width + ox * stride + wx) * c;
                    let px = &t.data[base..base + c];
                    for (a, &v) in acc.iter_mut().zip(px) {
                        *a += match exponent {
                            1 => v.abs(),
                            2 => v * v,
                            p => v.abs().powi(p as i32),
                        };
                    }
                }
            }
            let dst = &mut out.data[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
            for (d, &a) in dst.iter_mut().zip(&acc) {
                *d = match exponent {
                    1 => a,
                    2 => a.sqrt(),
                    p => a.powf(1.0 / p as f64),
                };
            }
        }
    }
    Ok(out)
}

/// Divides each activation by `max(1, ‖neighborhood‖₂)`, the neighborhood
/// being the zero-padded 3×3 spatial window across all channels.
pub fn divisive_normalize(t: &Tensor) -> Tensor {
    let (h, w, c) = t.shape();
    let energy: Vec<f64> = t
        .data
        .chunks_exact(c.max(1))
        .map(|px| px.iter().map(|v| v * v).sum())
        .collect();
    let mut out = t.clone();
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    sum += energy[ny * w + nx];
                }
            }
            let denom = sum.sqrt().max(1.0);
            if denom > 1.0 {
                let base = (y * w + x) * c;
                out.data[base..base + c].iter_mut().for_each(|v| *v /= denom);
            }
        }
    }
    out
}

/// Shape `(height, width, channels)` of the final activations for a gallery
/// of `native` (w, h) images; errors name the layer that collapses.
pub fn output_shape(spec: &ArchitectureSpec, native: (usize, usize)) -> Result<(usize, usize, usize)> {
    spec.validate()?;
    let (w, h) = spec.input_dims(native);
    let (mut h, mut w) = (h, w);
    let mut c = 1;
    for (i, l) in spec.layers.iter().enumerate() {
        if h < l.filter_size || w < l.filter_size {
            return Err(Error::Shape {
                layer: i,
                reason: format!("{w}x{h} input is smaller than the {0}x{0} filters", l.filter_size),
            });
        }
        h = h - l.filter_size + 1;
        w = w - l.filter_size + 1;
        let win = l.pool_window();
        if h < win || w < win {
            return Err(Error::Shape {
                layer: i,
                reason: format!("{w}x{h} activations are smaller than the {win}x{win} pooling window"),
            });
        }
        h = (h - win) / l.pool_stride + 1;
        w = (w - win) / l.pool_stride + 1;
        c = l.num_filters;
    }
    Ok((h, w, c))
}

pub fn feature_len(spec: &ArchitectureSpec, native: (usize, usize)) -> Result<usize> {
    let (h, w, c) = output_shape(spec, native)?;
    Ok(h * w * c)
}

/// Multiply-accumulate count of the convolutions for one image.
pub fn estimated_macs(spec: &ArchitectureSpec, native: (usize, usize)) -> Result<u64> {
    spec.validate()?;
    let (w, h) = spec.input_dims(native);
    let (mut h, mut w, mut c) = (h as u64, w as u64, 1u64);
    let mut total = 0u64;
    for (i, l) in spec.layers.iter().enumerate() {
        let k = l.filter_size as u64;
        if h < k || w < k {
            return Err(Error::Shape {
                layer: i,
                reason: "input smaller than filters".into(),
            });
        }
        h = h - k + 1;
        w = w - k + 1;
        total += h * w * l.num_filters as u64 * k * k * c;
        let win = l.pool_window() as u64;
        if h < win || w < win {
            return Err(Error::Shape {
                layer: i,
                reason: "activations smaller than pooling window".into(),
            });
        }
        h = (h - win) / l.pool_stride as u64 + 1;
        w = (w - win) / l.pool_stride as u64 + 1;
        c = l.num_filters as u64;
    }
    Ok(total)
}

fn standardize(img: &FaceImage) -> Tensor {
    let px = img.pixels();
    let n = px.len() as f64;
    let mean = px.iter().sum::<f64>() / n;
    let var = px.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let flat = px.iter().all(|&v| v == px[0]);
    let sd = var.sqrt().max(STD_FLOOR);
    let data = px
        .iter()
        .map(|v| if flat { 0.0 } else { (v - mean) / sd })
        .collect();
    Tensor {
        height: img.height(),
        width: img.width(),
        channels: 1,
        data,
    }
}

/// A spec with its filter banks drawn.
#[derive(Debug, Clone)]
pub struct BarkNetwork {
    pub spec: ArchitectureSpec,
    pub banks: Vec<FilterBank>,
}

impl BarkNetwork {
    pub fn new(spec: ArchitectureSpec) -> Result<Self> {
        spec.validate()?;
        let mut in_channels = 1;
        let banks = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let bank = make_filter_bank(l, in_channels, spec.seed, i);
                in_channels = l.num_filters;
                bank
            })
            .collect();
        Ok(Self { spec, banks })
    }

    /// Runs the whole pipeline on one face and flattens the result.
    pub fn extract(&self, img: &FaceImage) -> Result<Vec<f64>> {
        let (w, h) = self.spec.input_dims(img.dims());
        let resized = resize_bilinear(img, w, h)?;
        let mut t = standardize(&resized);
        for (i, (layer, bank)) in self.spec.layers.iter().zip(&self.banks).enumerate() {
            t = convolve(&t, bank, i)?;
            t = activate(&t, ACTIVATION_RANGE.0, ACTIVATION_RANGE.1)?;
            t = lp_pool(&t, layer.pool_exponent, layer.pool_stride, i)?;
            if layer.normalize {
                t = divisive_normalize(&t);
            }
        }
        Ok(t.data)
    }
}

/// One-shot feature extraction; build a [`BarkNetwork`] to reuse the filters.
pub fn bark_extract(spec: &ArchitectureSpec, img: &FaceImage) -> Result<Vec<f64>> {
    BarkNetwork::new(spec.clone())?.extract(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layer(nf: usize, k: usize, p: u32, s: usize, norm: bool) -> LayerSpec {
        LayerSpec {
            num_filters: nf,
            filter_size: k,
            pool_exponent: p,
            pool_stride: s,
            normalize: norm,
        }
    }

    fn textured(w: usize, h: usize) -> FaceImage {
        let px = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                0.5 + 0.4 * (x * 0.7).sin() * (y * 0.3).cos()
            })
            .collect();
        FaceImage::new(w, h, px, "tex").unwrap()
    }

    #[test]
    fn filter_banks_are_deterministic_and_normalized() {
        let l = layer(32, 5, 2, 2, false);
        let a = make_filter_bank(&l, 3, 7, 0);
        let b = make_filter_bank(&l, 3, 7, 0);
        assert_eq!(a, b);
        for k in &a.kernels {
            assert_eq!(k.len(), 75);
            let mean = k.iter().sum::<f64>() / k.len() as f64;
            let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(mean.abs() < 1e-9 && (norm - 1.0).abs() < 1e-9);
        }
        assert_ne!(a, make_filter_bank(&l, 3, 8, 0));
        assert_ne!(a, make_filter_bank(&l, 3, 7, 1));
    }

    #[test]
    fn convolve_shapes_and_values() {
        let l = layer(32, 5, 1, 2, false);
        let bank = make_filter_bank(&l, 1, 1, 0);
        let input = Tensor::zeros(64, 64, 1);
        assert_eq!(convolve(&input, &bank, 0).unwrap().shape(), (60, 60, 32));

        let constant = Tensor::from_vec(8, 8, 1, vec![0.8; 64]).unwrap();
        let out = convolve(&constant, &bank, 0).unwrap();
        assert!(out.data.iter().all(|v| v.abs() < 1e-9));

        let single = make_filter_bank(&layer(32, 3, 1, 1, false), 1, 9, 0);
        let kernel = single.kernels[0].clone();
        let bank1 = FilterBank {
            size: 3,
            in_channels: 1,
            kernels: vec![kernel.clone()],
        };
        let input = Tensor::from_vec(3, 3, 1, kernel).unwrap();
        let out = convolve(&input, &bank1, 0).unwrap();
        assert_eq!(out.shape(), (1, 1, 1));
        assert!((out.data[0] - 1.0).abs() < 1e-12);

        let tiny = Tensor::zeros(2, 2, 1);
        assert!(matches!(convolve(&tiny, &bank, 4), Err(Error::Shape { layer: 4, .. })));
    }

    #[test]
    fn activation_clamps() {
        let t = Tensor::from_vec(1, 3, 1, vec![-0.5, 0.3, 7.0]).unwrap();
        assert_eq!(activate(&t, 0.0, 1.0).unwrap().data, vec![0.0, 0.3, 1.0]);
        assert!(activate(&t, 1.0, 1.0).is_err());
    }

    #[test]
    fn pooling_examples() {
        let t = Tensor::from_vec(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(lp_pool(&t, 1, 2, 0).unwrap().data, vec![10.0]);
        assert!((lp_pool(&t, 2, 2, 0).unwrap().data[0] - 30f64.sqrt()).abs() < 1e-12);
        let z = Tensor::zeros(2, 2, 3);
        assert!(lp_pool(&z, 10, 1, 0).unwrap().data.iter().all(|&v| v == 0.0));
        // stride 1 still pools a 2x2 window
        let t = Tensor::zeros(5, 5, 1);
        assert_eq!(lp_pool(&t, 1, 1, 0).unwrap().shape(), (4, 4, 1));
        assert!(lp_pool(&Tensor::zeros(3, 3, 1), 1, 4, 2).is_err());
    }

    #[test]
    fn divisive_normalization_examples() {
        let z = Tensor::zeros(3, 3, 2);
        assert_eq!(divisive_normalize(&z), z);
        let mut t = Tensor::zeros(3, 3, 1);
        t.data[4] = 0.5;
        assert_eq!(divisive_normalize(&t).data[4], 0.5);
        t.data[4] = 10.0;
        assert_eq!(divisive_normalize(&t).data[4], 1.0);
    }

    #[test]
    fn feature_length_example() {
        let spec = ArchitectureSpec {
            input_size: InputSize::Pixels(64),
            layers: vec![layer(32, 3, 1, 2, false)],
            seed: 0,
        };
        assert_eq!(feature_len(&spec, (250, 250)).unwrap(), 30_752);
        let f = bark_extract(&spec, &textured(80, 80)).unwrap();
        assert_eq!(f.len(), 30_752);
    }

    #[test]
    fn constant_image_gives_zero_features() {
        let spec = ArchitectureSpec {
            input_size: InputSize::Original,
            layers: vec![layer(32, 5, 2, 2, true), layer(64, 3, 10, 1, false)],
            seed: 3,
        };
        let img = FaceImage::constant(40, 40, 0.3).unwrap();
        assert!(bark_extract(&spec, &img).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn collapsing_spec_is_rejected() {
        let spec = ArchitectureSpec {
            input_size: InputSize::Pixels(64),
            layers: vec![layer(32, 9, 1, 8, false), layer(32, 9, 1, 8, false), layer(32, 9, 1, 8, false)],
            seed: 0,
        };
        assert!(matches!(output_shape(&spec, (64, 64)), Err(Error::Shape { layer: 1, .. })));
        assert!(matches!(
            bark_extract(&spec, &textured(64, 64)),
            Err(Error::Shape { layer: 1, .. })
        ));
    }

    #[test]
    fn spec_text_round_trip() {
        let spec = ArchitectureSpec {
            input_size: InputSize::Original,
            layers: vec![layer(64, 7, 10, 4, true), layer(32, 3, 1, 1, false)],
            seed: 99,
        };
        assert_eq!(spec.to_text().parse::<ArchitectureSpec>().unwrap(), spec);
        assert_eq!(spec.to_line().parse::<ArchitectureSpec>().unwrap(), spec);
        let with_extra = format!("# best\nstatus=ok {}", spec.to_line());
        assert_eq!(with_extra.parse::<ArchitectureSpec>().unwrap(), spec);
        assert!("layers=1 seed=0 input_size=64".parse::<ArchitectureSpec>().is_err());
        let bad = spec.to_line().replace("layer0.filters=64", "layer0.filters=48");
        assert!(bad.parse::<ArchitectureSpec>().is_err());
    }

    fn small_spec() -> impl Strategy<Value = ArchitectureSpec> {
        let layer = (
            prop::sample::select(vec![32usize]),
            prop::sample::select(FILTER_SIZES.to_vec()),
            prop::sample::select(POOL_EXPONENTS.to_vec()),
            prop::sample::select(POOL_STRIDES.to_vec()),
            any::<bool>(),
        )
            .prop_map(|(nf, k, p, s, n)| layer(nf, k, p, s, n));
        (prop::collection::vec(layer, 1..=3), any::<u64>(), prop::sample::select(vec![
            InputSize::Pixels(64),
            InputSize::Original,
        ]))
            .prop_map(|(layers, seed, input_size)| ArchitectureSpec { input_size, layers, seed })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn shape_query_matches_extraction(spec in small_spec()) {
            let img = textured(48, 40);
            match (feature_len(&spec, img.dims()), bark_extract(&spec, &img)) {
                (Ok(n), Ok(f)) => {
                    prop_assert_eq!(n, f.len());
                    prop_assert!(f.iter().all(|v| v.is_finite()));
                    if spec.layers.len() == 1 && !spec.layers[0].normalize {
                        let w = spec.layers[0].pool_window() as f64;
                        prop_assert!(f.iter().all(|&v| (0.0..=w * w).contains(&v)));
                    }
                }
                (Err(Error::Shape { layer: a, .. }), Err(Error::Shape { layer: b, .. })) => prop_assert_eq!(a, b),
                (a, b) => prop_assert!(false, "shape query {:?} vs extraction {:?}", a.map(|_| ()), b.map(|_| ())),
            }
        }
    }
}
