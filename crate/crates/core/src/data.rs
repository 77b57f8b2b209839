//! Landmark datasets: on-disk format, rotation augmentation, and a
//! synthetic thermal-face generator.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::{DynamicImage, ImageBuffer, Rgb};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const ANNOTATIONS: &str = "annotations.csv";
pub const N_POINTS: usize = 6;
/// Augmentation angle range in degrees, applied in both directions.
pub const ROTATION_RANGE: (f64, f64) = (20.0, 30.0);

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[H, W, 3]` in `[0, 1]`.
    pub image: Tensor,
    /// Landmarks `(x, y)` in pixels, y pointing down.
    pub points: Vec<(f64, f64)>,
    pub source_id: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Lookup { kind: "split", key: s.to_string() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub split: Split,
    /// `(H, W)`; `(0, 0)` only for an empty dataset read from disk.
    pub dims: (usize, usize),
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, split: Split, dims: (usize, usize)) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.image.shape() != [dims.0, dims.1, 3]) {
            return Err(Error::Dimension(format!(
                "sample `{}` is {:?}, dataset is {}x{}x3",
                s.source_id,
                s.image.shape(),
                dims.0,
                dims.1
            )));
        }
        Ok(Self { samples, split, dims })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.dims.0, self.dims.1, 3]
    }

    /// Seeded shuffle, then the first `round(len * val_fraction)` samples
    /// become the validation set.
    pub fn split_off(&self, val_fraction: f64, rng: &mut RngStream) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::config(format!("validation fraction {val_fraction} outside [0, 1)")));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        rng.shuffle(&mut order);
        let n_val = (self.len() as f64 * val_fraction).round() as usize;
        let pick = |idx: &[usize], split| Dataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            split,
            dims: self.dims,
        };
        Ok((pick(&order[n_val..], Split::Train), pick(&order[..n_val], Split::Val)))
    }
}

/// `[2, N]` target: row 0 holds `x / W`, row 1 holds `y / H`.
pub fn normalized_points(points: &[(f64, f64)], dims: (usize, usize)) -> Tensor {
    let (h, w) = (dims.0 as f64, dims.1 as f64);
    let mut v: Vec<f64> = points.iter().map(|p| p.0 / w).collect();
    v.extend(points.iter().map(|p| p.1 / h));
    Tensor::new(vec![2, points.len()], v).expect("nonempty point list")
}

/// Inverse of [`normalized_points`].
pub fn pixel_points(t: &Tensor, dims: (usize, usize)) -> Vec<(f64, f64)> {
    let n = t.shape()[1];
    let d = t.data();
    (0..n).map(|i| (d[i] * dims.1 as f64, d[n + i] * dims.0 as f64)).collect()
}

fn load_err(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Load { location: location.into(), message: message.into() }
}

fn read_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.into(), message: e.to_string() })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let wide = matches!(
        img,
        DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
    );
    let data: Vec<f64> = match (img.color().has_color(), wide) {
        (false, true) => img.to_luma16().pixels().flat_map(|p| [p.0[0] as f64 / 65535.0; 3]).collect(),
        (false, false) => img.to_luma8().pixels().flat_map(|p| [p.0[0] as f64 / 255.0; 3]).collect(),
        (true, true) => img.to_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        (true, false) => img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
    };
    Tensor::new(vec![h, w, 3], data)
}

/// Reads `annotations.csv` and the images it references.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let csv_path = dir.join(ANNOTATIONS);
    let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| load_err(csv_path.display().to_string(), e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| load_err(csv_path.display().to_string(), e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut expected = vec!["filename".to_string()];
    for i in 0..N_POINTS {
        expected.extend([format!("x{i}"), format!("y{i}")]);
    }
    if header != expected {
        return Err(load_err(format!("{} header", csv_path.display()), format!("expected `{}`", expected.join(","))));
    }
    let mut samples = Vec::new();
    let mut dims = None;
    for (i, rec) in reader.records().enumerate() {
        let row = format!("{} row {}", csv_path.display(), i + 1);
        let rec = rec.map_err(|e| load_err(&row, e.to_string()))?;
        let name = rec.get(0).unwrap_or_default();
        let coords: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| load_err(&row, format!("bad coordinate: {e}")))?;
        let image = read_image(&dir.join(name)).map_err(|e| load_err(&row, e.to_string()))?;
        let (h, w) = (image.shape()[0], image.shape()[1]);
        if *dims.get_or_insert((h, w)) != (h, w) {
            return Err(load_err(&row, format!("image is {h}x{w}, earlier images are {:?}", dims.unwrap())));
        }
        let points: Vec<(f64, f64)> = coords.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        if let Some(p) = points.iter().find(|p| !(0.0..w as f64).contains(&p.0) || !(0.0..h as f64).contains(&p.1)) {
            return Err(load_err(&row, format!("point ({}, {}) outside {w}x{h} image", p.0, p.1)));
        }
        let source_id = Path::new(name).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        samples.push(Sample { image, points, source_id });
    }
    Dataset::new(samples, Split::Train, dims.unwrap_or((0, 0)))
}

fn file_stem_for(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '+' | '-') { c } else { '_' })
        .collect();
    if s.is_empty() { "sample".into() } else { s }
}

/// Writes 8-bit RGB PNGs plus `annotations.csv`.
pub fn write_dataset(d: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(ANNOTATIONS);
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| load_err(csv_path.display().to_string(), e.to_string()))?;
    let mut header = vec!["filename".to_string()];
    for i in 0..N_POINTS {
        header.extend([format!("x{i}"), format!("y{i}")]);
    }
    let csv_err = |e: csv::Error| load_err(csv_path.display().to_string(), e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    let mut used = HashSet::new();
    for (i, s) in d.samples.iter().enumerate() {
        let mut stem = file_stem_for(&s.source_id);
        if !used.insert(stem.clone()) {
            stem = format!("{stem}_{i}");
            used.insert(stem.clone());
        }
        let name = format!("{stem}.png");
        write_png(&s.image, &dir.join(&name))?;
        let mut rec = vec![name];
        for p in &s.points {
            rec.extend([p.0.to_string(), p.1.to_string()]);
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))
}

/// Saves an `[H, W, 3]` tensor in `[0, 1]` as an 8-bit RGB PNG.
pub fn write_png(image: &Tensor, path: &Path) -> Result<()> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let raw: Vec<u8> = image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| Error::Image { path: path.into(), message: "image must be HxWx3".into() })?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image { path: path.into(), message: e.to_string() })
}

/// Rotates `(x, y)` by `theta` degrees about `center`:
/// `x' = cx + cos(t) dx - sin(t) dy`, `y' = cy + sin(t) dx + cos(t) dy`.
pub fn rotate_point(p: (f64, f64), center: (f64, f64), theta: f64) -> (f64, f64) {
    let (s, c) = theta.to_radians().sin_cos();
    let (dx, dy) = (p.0 - center.0, p.1 - center.1);
    (center.0 + c * dx - s * dy, center.1 + s * dx + c * dy)
}

/// Rotates image and points about the image center. The image is resampled
/// by bilinear interpolation of the inverse map with zero fill; points are
/// not clipped.
pub fn rotate_sample(s: &Sample, theta: f64) -> Sample {
    if theta == 0.0 {
        return s.clone();
    }
    let (h, w) = (s.image.shape()[0], s.image.shape()[1]);
    let center = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let src = s.image.data();
    let mut out = vec![0.0; src.len()];
    let px = |y: isize, x: isize, c: usize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            src[(y as usize * w + x as usize) * 3 + c]
        }
    };
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = rotate_point((x as f64, y as f64), center, -theta);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for c in 0..3 {
                let v = (1.0 - fy) * ((1.0 - fx) * px(y0, x0, c) + fx * px(y0, x0 + 1, c))
                    + fy * ((1.0 - fx) * px(y0 + 1, x0, c) + fx * px(y0 + 1, x0 + 1, c));
                out[(y * w + x) * 3 + c] = v;
            }
        }
    }
    Sample {
        image: Tensor::new(vec![h, w, 3], out).expect("same shape"),
        points: s.points.iter().map(|&p| rotate_point(p, center, theta)).collect(),
        source_id: format!("{}_rot{theta:+.2}", s.source_id),
    }
}

/// One left angle in `[20, 30]` and one right angle in `[-30, -20]` per
/// sample, in draw order.
pub fn augmentation_angles(n: usize, rng: &mut RngStream) -> Vec<(f64, f64)> {
    let (lo, hi) = ROTATION_RANGE;
    (0..n).map(|_| (rng.uniform_in(lo, hi), -rng.uniform_in(lo, hi))).collect()
}

/// Originals followed by a left and a right rotation of each sample, with
/// rotated points clipped into the frame.
pub fn augment_dataset(d: &Dataset, rng: &mut RngStream) -> Dataset {
    let angles = augmentation_angles(d.len(), rng);
    let (h, w) = d.dims;
    let clip = |mut s: Sample| {
        for p in &mut s.points {
            p.0 = p.0.clamp(0.0, w as f64 - 1.0);
            p.1 = p.1.clamp(0.0, h as f64 - 1.0);
        }
        s
    };
    let mut samples = d.samples.clone();
    for (s, (left, right)) in d.samples.iter().zip(angles) {
        samples.push(clip(rotate_sample(s, left)));
        samples.push(clip(rotate_sample(s, right)));
    }
    Dataset { samples, split: d.split, dims: d.dims }
}

/// Landmark peak amplitude in the synthetic intensity map.
const PEAK: f64 = 0.45;
const ARC: f64 = 0.08;
const FACE: f64 = 0.2;

/// Generates `count` synthetic thermal faces of size `dims = (H, W)`.
///
/// Intensity is a smooth background plus a warm ellipse, a faint arc below
/// its center, and a Gaussian peak at each of the six arc control points.
/// Channels are `(I, I^2, 0.3 (1 - I))`, so channel 0 carries the peaks.
pub fn synth_generate(count: usize, dims: (usize, usize), rng: &mut RngStream) -> Result<Dataset> {
    let (h, w) = dims;
    if h < 24 || w < 32 {
        return Err(Error::config(format!("synthetic images need at least 24x32, got {h}x{w}")));
    }
    let samples = (0..count).map(|i| synth_sample(i, h, w, rng)).collect();
    Dataset::new(samples, Split::Train, dims)
}

fn synth_sample(index: usize, h: usize, w: usize, rng: &mut RngStream) -> Sample {
    let (hf, wf) = (h as f64, w as f64);
    let cx = rng.uniform_in(0.3, 0.7) * wf;
    let cy = rng.uniform_in(0.3, 0.7) * hf;
    let ax = 0.28 * wf * rng.uniform_in(0.9, 1.1);
    let ay = 0.32 * hf * rng.uniform_in(0.9, 1.1);
    let half = 0.2 * wf * rng.uniform_in(0.95, 1.05);
    let drop = 0.08 * hf * rng.uniform_in(0.8, 1.2);
    let base = cy + 0.02 * hf;
    let (fx, fy) = (rng.uniform_in(0.5, 1.5), rng.uniform_in(0.5, 1.5));
    let (p1, p2) = (rng.uniform_in(0.0, 2.0 * PI), rng.uniform_in(0.0, 2.0 * PI));
    let level = rng.uniform_in(0.1, 0.2);
    let sigma = (0.012 * wf).max(1.0);
    let arc_y = |t: f64| base + drop * t * t;
    let points: Vec<(f64, f64)> = (0..N_POINTS)
        .map(|k| {
            let t = -1.0 + 2.0 * k as f64 / (N_POINTS - 1) as f64;
            let x = cx + half * t + 0.3 * rng.normal();
            let y = arc_y(t) + 0.3 * rng.normal();
            (x.clamp(0.0, wf - 1.0), y.clamp(0.0, hf - 1.0))
        })
        .collect();
    let arc: Vec<(f64, f64)> = (0..=64)
        .map(|j| {
            let t = -1.0 + 2.0 * j as f64 / 64.0;
            (cx + half * t, arc_y(t))
        })
        .collect();
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let bg = level
                + 0.05 * (2.0 * PI * fx * xf / wf + p1).sin() * (2.0 * PI * fy * yf / hf + p2).sin();
            let r2 = ((xf - cx) / ax).powi(2) + ((yf - cy) / ay).powi(2);
            let face = FACE * (1.0 - r2).max(0.0);
            let near = arc.iter().map(|a| (a.0 - xf).powi(2) + (a.1 - yf).powi(2)).fold(f64::INFINITY, f64::min);
            let line = ARC * (-near / (2.0 * sigma * sigma)).exp();
            let peaks: f64 = points
                .iter()
                .map(|p| PEAK * (-((p.0 - xf).powi(2) + (p.1 - yf).powi(2)) / (2.0 * sigma * sigma)).exp())
                .sum();
            let i = (bg + face + line + peaks).clamp(0.0, 1.0);
            data.extend([i, i * i, 0.3 * (1.0 - i)]);
        }
    }
    Sample {
        image: Tensor::new(vec![h, w, 3], data).expect("sized"),
        points,
        source_id: format!("synth_{index:05}"),
    }
}
