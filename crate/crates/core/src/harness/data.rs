//! Synthetic data generators and natural-image patches.

use std::path::Path;

use super::pgm::GrayImage;
use crate::error::{Error, Result};
use crate::models::{DeepLatentModel, GenerativeModel, LinearGaussianModel};
use crate::tensor::{Rng, Tensor};

/// `N × M` samples or a `T × M` sequence, with a note on where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub data: Tensor,
    pub source: String,
}

impl Dataset {
    pub fn new(data: Tensor, source: impl Into<String>) -> Result<Self> {
        data.require_matrix("dataset")?;
        if !data.is_finite() {
            return Err(Error::DegenerateData("dataset has non-finite entries".into()));
        }
        Ok(Self { data, source: source.into() })
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.data.row(i).to_vec()).collect()
    }

    /// First `n` rows and the rest.
    pub fn split(&self, n: usize) -> Result<(Dataset, Dataset)> {
        let n = n.min(self.len());
        let m = self.dim();
        let head = Tensor::matrix(n, m, self.data.data()[..n * m].to_vec())?;
        let tail = Tensor::matrix(self.len() - n, m, self.data.data()[n * m..].to_vec())?;
        Ok((Dataset { data: head, source: self.source.clone() }, Dataset { data: tail, source: self.source.clone() }))
    }
}

fn stack(rows: &[Vec<f64>], m: usize) -> Result<Tensor> {
    Tensor::matrix(rows.len(), m, rows.iter().flatten().copied().collect())
}

fn draw(model: &GenerativeModel, n: usize, rng: &mut Rng) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| Ok(model.sample_joint(rng)?.observation)).collect::<Result<_>>()?;
    stack(&rows, model.obs_dim())
}

/// A random identity-link linear model (see [`LinearGaussianModel::random`])
/// and `n` ancestral samples from it.
pub fn gen_linear_dataset(k: usize, m: usize, n: usize, seed: u64) -> Result<(Dataset, LinearGaussianModel)> {
    if n == 0 || k == 0 || m == 0 {
        return Err(Error::InvalidArgument("K, M and N must be positive".into()));
    }
    let root = Rng::new(seed);
    let model = LinearGaussianModel::random(k, m, &mut root.child(0));
    let data = draw(&model.clone().into(), n, &mut root.child(1))?;
    let ds = Dataset::new(data, format!("linear K={k} M={m} N={n} seed={seed}"))?;
    Ok((ds, model))
}

/// A random deep latent model (see [`DeepLatentModel::random`]) and `n` samples.
pub fn gen_deep_dataset(
    latent_dims: &[usize],
    m: usize,
    hidden: usize,
    obs_std: f64,
    n: usize,
    seed: u64,
) -> Result<(Dataset, DeepLatentModel)> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be positive".into()));
    }
    let root = Rng::new(seed);
    let model = DeepLatentModel::random(latent_dims, m, hidden, obs_std, &mut root.child(0))?;
    let data = draw(&model.clone().into(), n, &mut root.child(1))?;
    let ds = Dataset::new(data, format!("deep dims={latent_dims:?} M={m} N={n} seed={seed}"))?;
    Ok((ds, model))
}

/// Binary `size × size` square on an `h × w` frame, moving by `velocity`
/// (rows, columns) pixels per frame with wraparound. Frames are flattened
/// row-major into a `T × (h·w)` sequence. The seed picks the start corner.
pub fn gen_moving_square_video(
    t: usize,
    h: usize,
    w: usize,
    size: usize,
    velocity: (i64, i64),
    seed: u64,
) -> Result<Dataset> {
    if size == 0 || size > h || size > w || t == 0 {
        return Err(Error::InvalidArgument(format!("a {size}px square does not fit a {h}x{w} frame")));
    }
    let mut rng = Rng::new(seed);
    let (y0, x0) = (rng.below(h) as i64, rng.below(w) as i64);
    let mut data = vec![0.0; t * h * w];
    for f in 0..t {
        let (y, x) = (y0 + velocity.0 * f as i64, x0 + velocity.1 * f as i64);
        for dy in 0..size as i64 {
            for dx in 0..size as i64 {
                let yy = (y + dy).rem_euclid(h as i64) as usize;
                let xx = (x + dx).rem_euclid(w as i64) as usize;
                data[f * h * w + yy * w + xx] = 1.0;
            }
        }
    }
    Dataset::new(
        Tensor::matrix(t, h * w, data)?,
        format!("moving square T={t} {h}x{w} size={size} v={velocity:?} seed={seed}"),
    )
}

/// Stationary AR(1) per dimension with unit marginal variance:
/// `x_t = ρ x_{t−1} + √(1−ρ²) ε_t`.
pub fn gen_ar1(t: usize, m: usize, rho: f64, seed: u64) -> Result<Dataset> {
    if !(rho.abs() < 1.0) || t == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!("need |rho| < 1 and a non-empty shape, got rho={rho}")));
    }
    let mut rng = Rng::new(seed);
    let innov = (1.0 - rho * rho).sqrt();
    let mut data = Vec::with_capacity(t * m);
    let mut prev = rng.normal_vec(m);
    data.extend_from_slice(&prev);
    for _ in 1..t {
        prev = prev.iter().map(|p| rho * p + innov * rng.standard_normal()).collect();
        data.extend_from_slice(&prev);
    }
    Dataset::new(Tensor::matrix(t, m, data)?, format!("ar1 T={t} M={m} rho={rho} seed={seed}"))
}

/// `count` random `patch × patch` crops (pixel values scaled to [0, 1]) from
/// the given PGM images, each with its own mean removed when `remove_mean`.
/// Images are chosen uniformly, then positions uniformly within the image.
pub fn load_patches(
    paths: &[impl AsRef<Path>],
    patch: usize,
    count: usize,
    seed: u64,
    remove_mean: bool,
) -> Result<Dataset> {
    if paths.is_empty() || patch == 0 {
        return Err(Error::InvalidArgument("need at least one image and a positive patch size".into()));
    }
    let images: Vec<GrayImage> = paths.iter().map(GrayImage::read).collect::<Result<_>>()?;
    for (img, p) in images.iter().zip(paths) {
        if img.width < patch || img.height < patch {
            return Err(Error::InvalidArgument(format!(
                "{} ({}x{}) is smaller than the {patch}px patch",
                p.as_ref().display(),
                img.width,
                img.height
            )));
        }
    }
    let mut rng = Rng::new(seed);
    let m = patch * patch;
    let mut data = Vec::with_capacity(count * m);
    for _ in 0..count {
        let img = &images[rng.below(images.len())];
        let y = rng.below(img.height - patch + 1);
        let x = rng.below(img.width - patch + 1);
        let mut p: Vec<f64> = (0..m).map(|k| img.get(x + k % patch, y + k / patch) as f64 / 255.0).collect();
        if remove_mean {
            let mean = p.iter().sum::<f64>() / m as f64;
            p.iter_mut().for_each(|v| *v -= mean);
        }
        data.extend(p);
    }
    Dataset::new(
        Tensor::matrix(count, m, data)?,
        format!("patches {patch}x{patch} count={count} seed={seed} images={}", images.len()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::TemporalPredictor;

    #[test]
    fn linear_dataset_is_seeded() {
        let (a, ma) = gen_linear_dataset(2, 3, 50, 9).unwrap();
        let (b, mb) = gen_linear_dataset(2, 3, 50, 9).unwrap();
        assert_eq!((a, ma), (b, mb));
        let (c, _) = gen_linear_dataset(2, 3, 50, 10).unwrap();
        assert_ne!(c.data, gen_linear_dataset(2, 3, 50, 9).unwrap().0.data);
        assert!(gen_linear_dataset(1, 1, 0, 0).is_err());
    }

    #[test]
    fn moving_square_deltas_are_sparse() {
        let video = gen_moving_square_video(20, 16, 16, 4, (0, 1), 3).unwrap();
        assert!(video.data.data().iter().all(|v| *v == 0.0 || *v == 1.0));
        let y = TemporalPredictor::previous_frame(256).normalize(&video.data).unwrap();
        for r in 0..y.rows() {
            let nz = y.row(r).iter().filter(|v| **v != 0.0).count();
            assert_eq!(nz, 2 * 4);
        }
        let still = gen_moving_square_video(5, 8, 8, 3, (0, 0), 1).unwrap();
        let y = TemporalPredictor::previous_frame(64).normalize(&still.data).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
        assert!(gen_moving_square_video(5, 4, 4, 5, (0, 1), 0).is_err());
    }

    #[test]
    fn ar1_has_unit_variance() {
        let d = gen_ar1(20_000, 1, 0.9, 4).unwrap();
        let (_, cov) = d.data.sample_moments().unwrap();
        assert!((cov.get(0, 0) - 1.0).abs() < 0.1);
        assert!(gen_ar1(10, 1, 1.0, 0).is_err());
    }

    #[test]
    fn patches_from_bundled_image() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/camera256.pgm");
        let d = load_patches(&[path], 8, 500, 5, true).unwrap();
        assert_eq!((d.len(), d.dim()), (500, 64));
        for r in 0..d.len() {
            assert!(d.data.row(r).iter().sum::<f64>().abs() < 1e-12);
        }
        assert_eq!(d, load_patches(&[path], 8, 500, 5, true).unwrap());
        assert!(load_patches(&[path], 300, 1, 5, true).is_err());
        assert!(matches!(load_patches(&["/nonexistent.pgm"], 8, 1, 0, true), Err(Error::Io(_))));
    }
}
