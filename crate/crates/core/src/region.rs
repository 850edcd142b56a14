//! Facial masks, keypoint-driven warp fields and synthetic frame rendering.
//!
//! Image coordinates: pixel `(row, col)` has its centre at `(x, y) = (col, row)`.
//! Warp fields use the backward convention `out(p) = in(p + d(p))`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image::{Image, Mask};
use crate::io::{read_json, write_bytes, write_json};
use crate::keypoints::{Vec2, Vec3};
use crate::rig::{FlameParams, RigDefinition};

/// Default landmark expansion about the centroid.
pub const DEFAULT_EXPANSION: f64 = 1.2;

/// Default Gaussian width of the warp kernel as a fraction of `min(H, W)`.
pub const DEFAULT_SIGMA_FRACTION: f64 = 0.05;

pub fn default_sigma(height: usize, width: usize) -> f64 {
    DEFAULT_SIGMA_FRACTION * height.min(width) as f64
}

/// Moves every point radially away from the centroid by `factor`.
pub fn expand_landmarks(points: &[Vec2], factor: f64) -> Result<Vec<Vec2>> {
    ensure!(points.len() >= 3, Geometry, "need at least 3 landmarks, got {}", points.len());
    ensure!(factor >= 1.0 && factor.is_finite(), Parameter, "expansion factor must be >= 1, got {factor}");
    ensure!(points.iter().all(|p| p.x.is_finite() && p.y.is_finite()), Domain, "non-finite landmark");
    let centroid = points.iter().fold(Vec2::zeros(), |a, p| a + p) / points.len() as f64;
    ensure!(
        points.iter().any(|p| (p - centroid).norm() > 1e-12),
        Geometry,
        "landmarks are all coincident"
    );
    Ok(points.iter().map(|p| centroid + (p - centroid) * factor).collect())
}

fn cross(o: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull by the monotone-chain algorithm, counter-clockwise in `(x, y)`,
/// without collinear vertices.
pub fn convex_hull(points: &[Vec2]) -> Result<Vec<Vec2>> {
    ensure!(points.len() >= 3, Geometry, "convex hull needs at least 3 points, got {}", points.len());
    let mut pts: Vec<Vec2> = points.to_vec();
    pts.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap().then(a.y.partial_cmp(&b.y).unwrap()));
    pts.dedup();
    let mut hull: Vec<Vec2> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vec2>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    ensure!(hull.len() >= 3, Geometry, "points are collinear");
    Ok(hull)
}

/// Inclusive point-in-polygon test for a counter-clockwise convex polygon.
pub fn point_in_convex_polygon(p: &Vec2, hull: &[Vec2]) -> bool {
    let n = hull.len();
    (0..n).all(|i| {
        let a = &hull[i];
        let b = &hull[(i + 1) % n];
        // scale-aware tolerance so boundary points count as inside
        let tol = 1e-9 * (b - a).norm().max(1.0);
        cross(a, b, p) >= -tol
    })
}

/// Facial and non-facial masks from 2D landmarks: the rasterised hull of the
/// expanded landmarks, plus the pixel under each expanded landmark.
pub fn facial_masks(landmarks: &[Vec2], factor: f64, height: usize, width: usize) -> Result<(Mask, Mask)> {
    let expanded = expand_landmarks(landmarks, factor)?;
    let hull = convex_hull(&expanded)?;
    let (min_x, max_x, min_y, max_y) = hull.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), p| (a.min(p.x), b.max(p.x), c.min(p.y), d.max(p.y)),
    );
    let mut facial = Mask::new(height, width, false);
    let clamp = |v: f64, hi: usize| v.clamp(0.0, hi as f64 - 1.0) as usize;
    if max_x >= 0.0 && max_y >= 0.0 && min_x <= width as f64 - 1.0 && min_y <= height as f64 - 1.0 {
        for r in clamp(min_y.floor(), height)..=clamp(max_y.ceil(), height) {
            for c in clamp(min_x.floor(), width)..=clamp(max_x.ceil(), width) {
                if point_in_convex_polygon(&Vec2::new(c as f64, r as f64), &hull) {
                    facial.set(r, c, true);
                }
            }
        }
    }
    for p in &expanded {
        let (c, r) = (p.x.round(), p.y.round());
        if c >= 0.0 && r >= 0.0 && (c as usize) < width && (r as usize) < height {
            facial.set(r as usize, c as usize, true);
        }
    }
    let nonfacial = facial.complement();
    Ok((facial, nonfacial))
}

/// Dense `H×W` displacement field in pixels, `(dx, dy)` per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpField {
    height: usize,
    width: usize,
    data: Vec<[f64; 2]>,
}

pub const WARP_CONVENTION: &str = "backward: out(p) = in(p + d(p))";

#[derive(Serialize, Deserialize)]
struct WarpHeader {
    height: usize,
    width: usize,
    components: usize,
    dtype: String,
    convention: String,
    data: String,
}

impl WarpField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![[0.0; 2]; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Vec2 {
        let d = self.data[row * self.width + col];
        Vec2::new(d[0], d[1])
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, d: Vec2) {
        self.data[row * self.width + col] = [d.x, d.y];
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|d| d[0] == 0.0 && d[1] == 0.0)
    }

    pub fn max_norm(&self) -> f64 {
        self.data.iter().map(|d| d[0].hypot(d[1])).fold(0.0, f64::max)
    }

    /// Whether any pixel outside `mask` has a nonzero displacement.
    pub fn nonzero_outside(&self, mask: &Mask) -> bool {
        (0..self.height).any(|r| (0..self.width).any(|c| !mask.get(r, c) && self.get(r, c) != Vec2::zeros()))
    }

    /// Writes `stem.json` (header) and `stem.bin` (little-endian `f64`, row-major,
    /// `dx` then `dy`).
    pub fn write(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        let bin = stem.with_extension("bin");
        let mut bytes = Vec::with_capacity(self.data.len() * 16);
        for d in &self.data {
            bytes.extend(d[0].to_le_bytes());
            bytes.extend(d[1].to_le_bytes());
        }
        write_bytes(&bin, &bytes)?;
        write_json(
            stem.with_extension("json"),
            &WarpHeader {
                height: self.height,
                width: self.width,
                components: 2,
                dtype: "f64le".into(),
                convention: WARP_CONVENTION.into(),
                data: bin.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            },
        )
    }

    /// Reads a field from its JSON header path.
    pub fn read(header: impl AsRef<Path>) -> Result<Self> {
        let header = header.as_ref();
        let h: WarpHeader = read_json(header)?;
        if h.components != 2 || h.dtype != "f64le" {
            return Err(Error::format(header, "unsupported warp field layout"));
        }
        let bin: PathBuf = header.with_file_name(&h.data);
        let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        if bytes.len() != h.height * h.width * 16 {
            return Err(Error::format(&bin, "warp field size does not match header"));
        }
        let data = bytes
            .chunks_exact(16)
            .map(|c| {
                [
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                ]
            })
            .collect();
        Ok(Self {
            height: h.height,
            width: h.width,
            data,
        })
    }
}

/// Gaussian-weighted local-translation field moving destination keypoints
/// onto source keypoints: `d(p) = Σ w_k Δ_k / max(1, Σ w_k)` with
/// `Δ_k = x_src,k − x_dst,k` and `w_k = exp(−‖p − x_dst,k‖² / 2σ²)`.
/// Exact at an isolated keypoint and vanishing far from all of them.
pub fn estimate_warp_field(x_src: &[Vec2], x_dst: &[Vec2], height: usize, width: usize, sigma: f64) -> Result<WarpField> {
    ensure!(!x_src.is_empty(), Parameter, "warp needs at least one keypoint");
    ensure!(
        x_src.len() == x_dst.len(),
        Parameter,
        "keypoint count mismatch ({} vs {})",
        x_src.len(),
        x_dst.len()
    );
    ensure!(sigma > 0.0 && sigma.is_finite(), Parameter, "sigma must be positive, got {sigma}");
    let mut field = WarpField::zeros(height, width);
    if x_src == x_dst {
        return Ok(field);
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let anchors: Vec<(Vec2, Vec2)> = x_src.iter().zip(x_dst).map(|(s, d)| (*d, s - d)).collect();
    for r in 0..height {
        for c in 0..width {
            let p = Vec2::new(c as f64, r as f64);
            let mut wsum = 0.0;
            let mut acc = Vec2::zeros();
            for (centre, delta) in &anchors {
                let w = (-(p - centre).norm_squared() * inv).exp();
                wsum += w;
                acc += w * delta;
            }
            field.set(r, c, acc / wsum.max(1.0));
        }
    }
    Ok(field)
}

/// Exact squared Euclidean distance transform of a 1D sampled function
/// (lower envelope of parabolas). Infinite samples are not sites.
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let sites: Vec<usize> = (0..f.len()).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut v = vec![0usize; sites.len()];
    let mut z = vec![0.0f64; sites.len() + 1];
    let mut k = 0usize;
    v[0] = sites[0];
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let key = |q: usize| f[q] + (q * q) as f64;
    for &q in &sites[1..] {
        let mut s = (key(q) - key(v[k])) / (2.0 * (q - v[k]) as f64);
        while s <= z[k] {
            k -= 1;
            s = (key(q) - key(v[k])) / (2.0 * (q - v[k]) as f64);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        *o = (q as f64 - v[k] as f64).powi(2) + f[v[k]];
    }
}

/// Euclidean distance from every pixel centre to the nearest set pixel of
/// `mask`; infinite everywhere when the mask is empty.
pub fn distance_to_mask(mask: &Mask) -> Vec<f64> {
    let (h, w) = (mask.height(), mask.width());
    let mut grid: Vec<f64> = (0..h * w)
        .map(|i| if mask.get(i / w, i % w) { 0.0 } else { f64::INFINITY })
        .collect();
    let mut col = vec![0.0; h];
    let mut out = vec![0.0; h.max(w)];
    for c in 0..w {
        for r in 0..h {
            col[r] = grid[r * w + c];
        }
        edt_1d(&col, &mut out[..h]);
        for r in 0..h {
            grid[r * w + c] = out[r];
        }
    }
    for r in 0..h {
        let row: Vec<f64> = grid[r * w..(r + 1) * w].to_vec();
        edt_1d(&row, &mut out[..w]);
        grid[r * w..(r + 1) * w].copy_from_slice(&out[..w]);
    }
    grid.into_iter().map(f64::sqrt).collect()
}

/// Keeps the field inside `facial`, ramps it linearly to zero over `feather`
/// pixels outside, and zeroes it beyond.
pub fn attenuate_outside_mask(field: &WarpField, facial: &Mask, feather: f64) -> Result<WarpField> {
    facial.check_dims(field.height, field.width, "attenuate_outside_mask")?;
    ensure!(feather >= 0.0 && feather.is_finite(), Parameter, "feather must be >= 0, got {feather}");
    let dist = distance_to_mask(facial);
    let mut out = field.clone();
    for (i, d) in out.data.iter_mut().enumerate() {
        let (r, c) = (i / field.width, i % field.width);
        if facial.get(r, c) {
            continue;
        }
        let factor = if feather == 0.0 {
            0.0
        } else {
            (1.0 - dist[i] / feather).max(0.0)
        };
        *d = [d[0] * factor, d[1] * factor];
    }
    Ok(out)
}

/// Bilinear sample at `(x, y)` with coordinates clamped to the frame.
pub fn sample_bilinear(img: &Image, x: f64, y: f64, ch: usize) -> f64 {
    let x = x.clamp(0.0, (img.width() - 1) as f64);
    let y = y.clamp(0.0, (img.height() - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width() - 1), (y0 + 1).min(img.height() - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = img.get(y0, x0, ch) * (1.0 - fx) + img.get(y0, x1, ch) * fx;
    let bottom = img.get(y1, x0, ch) * (1.0 - fx) + img.get(y1, x1, ch) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Backward warp `out(p) = img(p + d(p))`. Pixels with zero displacement are
/// copied unchanged.
pub fn apply_warp(img: &Image, field: &WarpField) -> Result<Image> {
    ensure!(
        img.height() == field.height && img.width() == field.width,
        Shape,
        "apply_warp: image is {}x{}, field is {}x{}",
        img.height(),
        img.width(),
        field.height,
        field.width
    );
    let mut out = img.clone();
    for r in 0..img.height() {
        for c in 0..img.width() {
            let d = field.get(r, c);
            if d == Vec2::zeros() {
                continue;
            }
            for ch in 0..img.channels() {
                out.set(r, c, ch, sample_bilinear(img, c as f64 + d.x, r as f64 + d.y, ch));
            }
        }
    }
    Ok(out)
}

/// Scaled orthographic camera: `col = scale·x + offset_x`,
/// `row = offset_y − scale·y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub scale: f64,
    pub offset_x: f64,
    pub offset_y: f64,
}

impl Camera {
    /// Frames the synthetic head and neck in an `H×W` image.
    pub fn framing(height: usize, width: usize) -> Self {
        let scale = 0.35 * height.min(width) as f64;
        Self {
            scale,
            offset_x: width as f64 / 2.0,
            offset_y: height as f64 / 2.0 - 0.3 * scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.scale > 0.0 && self.scale.is_finite(),
            Parameter,
            "camera scale must be positive, got {}",
            self.scale
        );
        ensure!(self.offset_x.is_finite() && self.offset_y.is_finite(), Parameter, "non-finite camera offset");
        Ok(())
    }

    pub fn project(&self, p: &Vec3) -> Vec2 {
        Vec2::new(self.scale * p.x + self.offset_x, self.offset_y - self.scale * p.y)
    }

    pub fn project_all(&self, points: &[Vec3]) -> Vec<Vec2> {
        points.iter().map(|p| self.project(p)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Background {
    Flat { value: f64 },
    /// Smooth deterministic pattern, so that any displacement of the
    /// background changes pixel values.
    Textured,
}

impl Background {
    pub fn value(&self, row: usize, col: usize) -> f64 {
        match *self {
            Background::Flat { value } => value,
            Background::Textured => {
                let (x, y) = (col as f64, row as f64);
                0.3 + 0.1 * (0.45 * x).sin() + 0.1 * (0.31 * y + 0.2 * x).cos()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderStyle {
    /// Disc radius in pixels.
    pub radius: f64,
    pub vertex_value: f64,
    pub wireframe: bool,
    pub line_value: f64,
    pub background: Background,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            radius: 1.0,
            vertex_value: 0.95,
            wireframe: true,
            line_value: 0.7,
            background: Background::Textured,
        }
    }
}

/// Pixel grid offset by an integer shift: local coordinates are
/// `(col − shift.0, row − shift.1)`. Rendering in local coordinates makes
/// integer camera offsets shift the image exactly.
#[derive(Clone, Copy)]
struct Canvas {
    shift: (i64, i64),
}

impl Canvas {
    fn pixel(&self, local_col: i64, local_row: i64, img: &Image) -> Option<(usize, usize)> {
        let (c, r) = (local_col + self.shift.0, local_row + self.shift.1);
        (c >= 0 && r >= 0 && (c as usize) < img.width() && (r as usize) < img.height()).then_some((r as usize, c as usize))
    }

    fn blend(&self, img: &mut Image, local_col: i64, local_row: i64, value: f64, cover: f64) {
        if let Some((r, c)) = self.pixel(local_col, local_row, img) {
            for ch in 0..img.channels() {
                let old = img.get(r, c, ch);
                img.set(r, c, ch, old * (1.0 - cover) + value * cover);
            }
        }
    }

    fn disc(&self, img: &mut Image, centre: Vec2, radius: f64, value: f64) {
        let reach = radius + 0.5;
        let (c0, c1) = ((centre.x - reach).floor() as i64, (centre.x + reach).ceil() as i64);
        let (r0, r1) = ((centre.y - reach).floor() as i64, (centre.y + reach).ceil() as i64);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let dist = (Vec2::new(c as f64, r as f64) - centre).norm();
                let cover = (radius + 0.5 - dist).clamp(0.0, 1.0);
                if cover > 0.0 {
                    self.blend(img, c, r, value, cover);
                }
            }
        }
    }

    fn line(&self, img: &mut Image, a: Vec2, b: Vec2, value: f64) {
        let steps = ((b - a).norm() * 2.0).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let p = a + (b - a) * (i as f64 / steps as f64);
            let (c, r) = (p.x.round(), p.y.round());
            let cover = 0.5 * (1.0 - (Vec2::new(c, r) - p).norm()).clamp(0.0, 1.0);
            self.blend(img, c as i64, r as i64, value, cover);
        }
    }
}

/// Renders the posed mesh as anti-aliased vertex discs (and optionally its
/// wireframe) over the background, single channel.
pub fn render_keypoint_frame(
    rig: &RigDefinition,
    params: &FlameParams,
    camera: &Camera,
    height: usize,
    width: usize,
    style: &RenderStyle,
) -> Result<Image> {
    camera.validate()?;
    ensure!(style.radius > 0.0, Parameter, "disc radius must be positive");
    let all: Vec<usize> = (0..rig.n_vertices()).collect();
    let verts = rig.forward_vertices(params, &all)?;
    let (ix, iy) = (camera.offset_x.floor(), camera.offset_y.floor());
    let local = Camera {
        offset_x: camera.offset_x - ix,
        offset_y: camera.offset_y - iy,
        ..*camera
    };
    let canvas = Canvas {
        shift: (ix as i64, iy as i64),
    };
    let px = local.project_all(&verts);
    let mut img = Image::from_fn(height, width, 1, |r, c, _| style.background.value(r, c))?;
    if style.wireframe {
        for e in &rig.edges {
            canvas.line(&mut img, px[e[0]], px[e[1]], style.line_value);
        }
    }
    for p in &px {
        canvas.disc(&mut img, *p, style.radius, style.vertex_value);
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::masked_l1;
    use crate::rig::{make_synthetic_rig, SyntheticRigConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<Vec2> {
        (0..n).map(|_| Vec2::new(rng.random_range(lo..hi), rng.random_range(lo..hi))).collect()
    }

    /// Hull vertices by brute force: a point is a vertex when it is extreme
    /// along some edge direction, i.e. every other point lies strictly left of
    /// one of its outgoing edges.
    fn brute_force_hull(points: &[Vec2]) -> Vec<Vec2> {
        let mut out = Vec::new();
        for (i, a) in points.iter().enumerate() {
            for (j, b) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let all_left = points
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != i && *k != j)
                    .all(|(_, p)| cross(a, b, p) > 0.0);
                if all_left && !out.contains(a) {
                    out.push(*a);
                }
            }
        }
        out
    }

    #[test]
    fn expansion_cases() {
        let sq = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(0.0, 1.0)];
        assert_eq!(expand_landmarks(&sq, 1.0).unwrap(), sq);
        let big = expand_landmarks(&sq, 2.0).unwrap();
        assert_eq!(big[0], Vec2::new(-0.5, -0.5));
        assert_eq!(big[2], Vec2::new(1.5, 1.5));
        assert!(expand_landmarks(&[Vec2::new(1.0, 1.0); 4], 1.5).is_err());
        assert!(expand_landmarks(&sq, 0.5).is_err());
        assert!(expand_landmarks(&sq[..2], 1.5).is_err());
    }

    #[test]
    fn hull_cases() {
        let tri = vec![Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0), Vec2::new(0.0, 2.0)];
        let h = convex_hull(&tri).unwrap();
        assert_eq!(h.len(), 3);
        assert!(tri.iter().all(|p| h.contains(p)));
        let sq = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(2.0, 2.0),
            Vec2::new(0.0, 2.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
        ];
        let h = convex_hull(&sq).unwrap();
        assert_eq!(h.len(), 4);
        assert!(!h.contains(&Vec2::new(1.0, 1.0)) && !h.contains(&Vec2::new(1.0, 0.0)));
        let line = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(2.0, 2.0)];
        assert!(matches!(convex_hull(&line), Err(Error::Geometry(_))));
    }

    #[test]
    fn hull_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let pts = cloud(&mut rng, 100, -5.0, 5.0);
            let h = convex_hull(&pts).unwrap();
            let bf = brute_force_hull(&pts);
            assert_eq!(h.len(), bf.len());
            assert!(h.iter().all(|p| bf.contains(p)));
            assert!(pts.iter().all(|p| point_in_convex_polygon(p, &h)));
            // counter-clockwise
            let area: f64 = (0..h.len()).map(|i| cross(&Vec2::zeros(), &h[i], &h[(i + 1) % h.len()])).sum();
            assert!(area > 0.0);
        }
    }

    #[test]
    fn masks_cover_frame_and_partition() {
        let lm = vec![Vec2::new(-5.0, -5.0), Vec2::new(40.0, -5.0), Vec2::new(40.0, 40.0), Vec2::new(-5.0, 40.0)];
        let (f, nf) = facial_masks(&lm, 1.0, 20, 30).unwrap();
        assert_eq!(f.count(), 600);
        assert_eq!(nf.count(), 0);
    }

    #[test]
    fn triangle_area_oracle() {
        let tri = vec![Vec2::new(3.3, 2.1), Vec2::new(40.7, 8.9), Vec2::new(12.2, 35.4)];
        let (f, _) = facial_masks(&tri, 1.0, 48, 48).unwrap();
        let area = 0.5 * cross(&tri[0], &tri[1], &tri[2]).abs();
        let perimeter: f64 = (0..3).map(|i| (tri[(i + 1) % 3] - tri[i]).norm()).sum();
        assert!((f.count() as f64 - area).abs() <= 2.0 * perimeter);
    }

    #[test]
    fn warp_field_cases() {
        let pts = vec![Vec2::new(10.0, 12.0), Vec2::new(30.0, 5.0)];
        assert!(estimate_warp_field(&pts, &pts, 40, 40, 3.0).unwrap().is_zero());

        let src = vec![Vec2::new(12.5, 9.0)];
        let dst = vec![Vec2::new(10.0, 10.0)];
        let f = estimate_warp_field(&src, &dst, 40, 40, 3.0).unwrap();
        assert_eq!(f.get(10, 10), Vec2::new(2.5, -1.0));

        // two keypoints, evaluated at their midpoint
        let dst = vec![Vec2::new(10.0, 20.0), Vec2::new(18.0, 20.0)];
        let src = vec![Vec2::new(11.0, 20.0), Vec2::new(18.0, 23.0)];
        let sigma = 5.0;
        let f = estimate_warp_field(&src, &dst, 40, 40, sigma).unwrap();
        let w = (-16.0f64 / (2.0 * sigma * sigma)).exp();
        let expected = Vec2::new(w * 1.0, w * 3.0) / (2.0 * w).max(1.0);
        assert_abs_diff_eq!(f.get(20, 14), expected, epsilon = 1e-15);
        assert!(estimate_warp_field(&src, &dst[..1], 4, 4, 1.0).is_err());
        assert!(estimate_warp_field(&src, &dst, 4, 4, 0.0).is_err());
    }

    #[test]
    fn warp_field_decays() {
        let sigma = 2.0;
        let src = vec![Vec2::new(6.0, 5.0)];
        let dst = vec![Vec2::new(5.0, 5.0)];
        let f = estimate_warp_field(&src, &dst, 40, 40, sigma).unwrap();
        for r in 0..40 {
            for c in 0..40 {
                let d = (Vec2::new(c as f64, r as f64) - dst[0]).norm();
                if d > 6.0 * sigma {
                    assert!(f.get(r, c).norm() < 1e-6 * f.max_norm());
                }
            }
        }
    }

    fn brute_force_distance(mask: &Mask, r: usize, c: usize) -> f64 {
        let mut best = f64::INFINITY;
        for rr in 0..mask.height() {
            for cc in 0..mask.width() {
                if mask.get(rr, cc) {
                    best = best.min(((rr as f64 - r as f64).powi(2) + (cc as f64 - c as f64).powi(2)).sqrt());
                }
            }
        }
        best
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mask = Mask::from_fn(17, 23, |_, _| rng.random::<f64>() < 0.05);
        let dt = distance_to_mask(&mask);
        for r in 0..17 {
            for c in 0..23 {
                assert_abs_diff_eq!(dt[r * 23 + c], brute_force_distance(&mask, r, c), epsilon = 1e-12);
            }
        }
        assert!(distance_to_mask(&Mask::new(3, 3, false)).iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn attenuation_cases() {
        let mut field = WarpField::zeros(10, 12);
        for r in 0..10 {
            for c in 0..12 {
                field.set(r, c, Vec2::new(1.0, -2.0));
            }
        }
        assert_eq!(attenuate_outside_mask(&field, &Mask::new(10, 12, true), 3.0).unwrap(), field);
        assert!(attenuate_outside_mask(&field, &Mask::new(10, 12, false), 0.0).unwrap().is_zero());

        let half = Mask::from_fn(10, 12, |_, c| c < 5);
        let out = attenuate_outside_mask(&field, &half, 4.0).unwrap();
        for (dist, expect) in [(1, 0.75), (2, 0.5), (3, 0.25), (4, 0.0)] {
            let c = 4 + dist;
            assert_abs_diff_eq!(out.get(3, c).x, expect, epsilon = 1e-15);
            assert_abs_diff_eq!(out.get(3, c).y, -2.0 * expect, epsilon = 1e-15);
        }
        assert_eq!(out.get(3, 4), Vec2::new(1.0, -2.0));
        assert!(attenuate_outside_mask(&field, &Mask::new(3, 3, true), 1.0).is_err());
    }

    #[test]
    fn warp_application_cases() {
        let ramp = Image::from_fn(8, 10, 1, |_, c, _| c as f64 / 10.0).unwrap();
        assert_eq!(apply_warp(&ramp, &WarpField::zeros(8, 10)).unwrap(), ramp);
        let mut shift = WarpField::zeros(8, 10);
        for r in 0..8 {
            for c in 0..10 {
                shift.set(r, c, Vec2::new(-1.0, 0.0));
            }
        }
        let out = apply_warp(&ramp, &shift).unwrap();
        for r in 0..8 {
            for c in 1..10 {
                assert_eq!(out.get(r, c, 0), ramp.get(r, c - 1, 0));
            }
        }
        let checker = Image::from_fn(8, 8, 1, |r, c, _| ((r + c) % 2) as f64).unwrap();
        let mut half = WarpField::zeros(8, 8);
        for r in 0..8 {
            for c in 0..8 {
                half.set(r, c, Vec2::new(0.5, 0.0));
            }
        }
        let out = apply_warp(&checker, &half).unwrap();
        for r in 0..8 {
            for c in 0..7 {
                assert_eq!(out.get(r, c, 0), 0.5);
            }
        }
        assert!(apply_warp(&ramp, &WarpField::zeros(3, 3)).is_err());
    }

    #[test]
    fn warp_field_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let src = vec![Vec2::new(3.3, 4.0)];
        let dst = vec![Vec2::new(5.0, 5.0)];
        let f = estimate_warp_field(&src, &dst, 9, 11, 2.0).unwrap();
        f.write(dir.path().join("flow")).unwrap();
        assert_eq!(WarpField::read(dir.path().join("flow.json")).unwrap(), f);
    }

    fn small_rig() -> RigDefinition {
        make_synthetic_rig(&SyntheticRigConfig {
            n_vertices: 150,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn rendering_is_deterministic_and_projects() {
        let rig = small_rig();
        let p = FlameParams::zeros_for(&rig);
        let cam = Camera::framing(64, 64);
        let style = RenderStyle {
            wireframe: false,
            background: Background::Flat { value: 0.0 },
            vertex_value: 1.0,
            radius: 1.5,
            ..Default::default()
        };
        let a = render_keypoint_frame(&rig, &p, &cam, 64, 64, &style).unwrap();
        let b = render_keypoint_frame(&rig, &p, &cam, 64, 64, &style).unwrap();
        assert_eq!(a, b);
        for &k in &rig.keypoint_indices {
            let v = rig.template_vertices[k];
            let (x, y) = (cam.scale * v.x + cam.offset_x, cam.offset_y - cam.scale * v.y);
            let q = cam.project(&v);
            assert!((q.x - x).abs() <= 0.5 && (q.y - y).abs() <= 0.5);
            // the pixel nearest the projection is fully covered
            assert_eq!(a.get(y.round() as usize, x.round() as usize, 0), 1.0);
        }
        assert!(render_keypoint_frame(&rig, &p, &Camera { scale: 0.0, ..cam }, 64, 64, &style).is_err());
    }

    #[test]
    fn integer_camera_offset_shifts_image() {
        let rig = small_rig();
        let p = FlameParams::zeros_for(&rig);
        let cam = Camera::framing(64, 64);
        let style = RenderStyle {
            background: Background::Flat { value: 0.1 },
            ..Default::default()
        };
        let a = render_keypoint_frame(&rig, &p, &cam, 64, 64, &style).unwrap();
        let moved = Camera {
            offset_x: cam.offset_x + 3.0,
            offset_y: cam.offset_y + 2.0,
            ..cam
        };
        let b = render_keypoint_frame(&rig, &p, &moved, 64, 64, &style).unwrap();
        for r in 0..62 {
            for c in 0..61 {
                assert_eq!(b.get(r + 2, c + 3, 0), a.get(r, c, 0));
            }
        }
    }

    proptest! {
        #[test]
        fn expansion_scales_distances(seed in 0u64..200, factor in 1.0..3.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = cloud(&mut rng, 12, -10.0, 10.0);
            let ex = expand_landmarks(&pts, factor).unwrap();
            for i in 0..12 {
                for j in 0..12 {
                    let d0 = (pts[i] - pts[j]).norm();
                    let d1 = (ex[i] - ex[j]).norm();
                    prop_assert!((d1 - factor * d0).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn masks_partition_and_contain_landmarks(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lm = cloud(&mut rng, 20, 5.0, 35.0);
            let (f, nf) = facial_masks(&lm, DEFAULT_EXPANSION, 40, 40).unwrap();
            prop_assert_eq!(f.and(&nf).count(), 0);
            prop_assert_eq!(f.or(&nf).count(), 1600);
            for p in expand_landmarks(&lm, DEFAULT_EXPANSION).unwrap() {
                let (c, r) = (p.x.round(), p.y.round());
                if (0.0..40.0).contains(&c) && (0.0..40.0).contains(&r) {
                    prop_assert!(f.get(r as usize, c as usize));
                }
            }
        }

        #[test]
        fn hard_attenuation_leaves_nonfacial_untouched(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = Image::from_fn(24, 24, 1, |_, _, _| rng.random::<f64>()).unwrap();
            let src = cloud(&mut rng, 6, 4.0, 20.0);
            let dst = cloud(&mut rng, 6, 4.0, 20.0);
            let field = estimate_warp_field(&src, &dst, 24, 24, 4.0).unwrap();
            let (facial, nonfacial) = facial_masks(&dst, 1.0, 24, 24).unwrap();
            let att = attenuate_outside_mask(&field, &facial, 0.0).unwrap();
            prop_assert_eq!(masked_l1(&apply_warp(&img, &att).unwrap(), &img, &nonfacial).unwrap(), 0.0);
        }
    }
}
