//! Linear measurement models `y = A x + e` and their proximal operators.
//!
//! Four variants:
//! * `BlurDownsample` — circular blur followed by keeping every `d`-th pixel
//!   (super-resolution). Prox solved exactly in the frequency domain through
//!   a `d x d` tiling of the spectrum (one Woodbury step, per-bin scalar
//!   divisions).
//! * `FourierMask` — masked 2-d Fourier samples (compressed-sensing MRI
//!   style). Measurements are the real/imaginary planes of the masked
//!   unitary spectrum; the mask must be point-symmetric so that real images
//!   stay real through the closed-form prox.
//! * `InpaintMask` — keep a binary subset of pixels; the data term is the
//!   consistency indicator, so the prox overwrites measured pixels with `y`
//!   (exactly, independent of the step size).
//! * `GenericLinear` — an explicit dense matrix; prox via a dense normal
//!   equations solve.
//!
//! FFT convention, fixed across the crate: unnormalized forward transform,
//! `1/n`-scaled inverse. For circular convolutions the adjoint is then again
//! a plain filtered transform with the conjugate spectrum (scale factors
//! cancel). The Fourier-mask variant alone uses the unitary scaling
//! (`fft/sqrt(n)`) so that its adjoint — and therefore the closed-form prox —
//! carries no stray `n` factors; the conjugate-gradient oracle, which only
//! sees `apply_forward`/`apply_adjoint`, verifies exactly this choice.
//!
//! Every variant keeps `apply_adjoint` the literal adjoint of
//! `apply_forward` (`<Ax, u> = <x, A^T u>` to near machine precision); the
//! prox tests and the training code both lean on that.

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, spd_solve};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::cell::RefCell;

// ---- 2-d FFT helpers ---------------------------------------------------------

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_rows(data: &mut [Complex64], rows: usize, cols: usize, inverse: bool) {
    PLANNER.with(|p| {
        let fft = if inverse {
            p.borrow_mut().plan_fft_inverse(cols)
        } else {
            p.borrow_mut().plan_fft_forward(cols)
        };
        for r in 0..rows {
            fft.process(&mut data[r * cols..(r + 1) * cols]);
        }
    });
}

fn transpose(data: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

/// Unnormalized forward 2-d FFT of row-major `h x w` data.
pub fn fft2(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut buf = data.to_vec();
    fft_rows(&mut buf, h, w, false);
    let mut buf = transpose(&buf, h, w);
    fft_rows(&mut buf, w, h, false);
    transpose(&buf, w, h)
}

/// Inverse 2-d FFT with `1/(h*w)` normalization; `ifft2(fft2(x)) == x`.
pub fn ifft2(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut buf = data.to_vec();
    fft_rows(&mut buf, h, w, true);
    let mut buf = transpose(&buf, h, w);
    fft_rows(&mut buf, w, h, true);
    let mut out = transpose(&buf, w, h);
    let scale = 1.0 / (h * w) as f64;
    for v in &mut out {
        *v *= scale;
    }
    out
}

fn to_complex(x: &Tensor) -> Vec<Complex64> {
    x.data().iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Real part, with a guard against the imaginary part carrying signal.
fn to_real_checked(data: &[Complex64], context: &str) -> Result<Vec<f64>> {
    let max_re = data.iter().fold(0.0f64, |m, c| m.max(c.re.abs()));
    let max_im = data.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
    if max_im > 1e-8 * max_re.max(1.0) {
        return Err(Error::numeric(format!(
            "{context}: imaginary residue {max_im:.3e} exceeds 1e-8 x {:.3e}",
            max_re.max(1.0)
        )));
    }
    Ok(data.iter().map(|c| c.re).collect())
}

// ---- kernels and masks -------------------------------------------------------

/// Normalized 2-d Gaussian blur kernel with odd extent.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Tensor> {
    if size % 2 == 0 || size == 0 {
        return Err(Error::config(format!("gaussian kernel extent must be odd, got {size}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::config(format!("gaussian kernel sigma must be positive, got {sigma}")));
    }
    let c = (size / 2) as f64;
    let mut data = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (dy, dx) = (i as f64 - c, j as f64 - c);
            data.push((-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = data.iter().sum();
    Ok(Tensor::from_vec(&[size, size], data.iter().map(|v| v / total).collect())?)
}

/// Binary inpainting mask: each pixel kept independently with probability
/// `keep_prob`.
pub fn random_inpaint_mask(h: usize, w: usize, keep_prob: f64, seed: u64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&keep_prob) {
        return Err(Error::config(format!("keep probability {keep_prob} outside [0,1]")));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    use rand::Rng;
    let data = (0..h * w)
        .map(|_| if rng.gen::<f64>() < keep_prob { 1.0 } else { 0.0 })
        .collect();
    Tensor::from_vec(&[h, w], data)
}

/// Point-symmetric pseudo-radial Fourier mask: golden-angle spokes through
/// DC are added until at least `target_ratio` of the bins are sampled.
/// Symmetry (`mask[-k] == mask[k]`) keeps real images real under the masked
/// transform.
pub fn pseudo_radial_mask(h: usize, w: usize, target_ratio: f64) -> Result<Tensor> {
    if !(0.0 < target_ratio && target_ratio <= 1.0) {
        return Err(Error::config(format!("mask ratio {target_ratio} outside (0,1]")));
    }
    let mut mask = vec![0.0f64; h * w];
    let mut kept = 0usize;
    let target = ((h * w) as f64 * target_ratio).ceil() as usize;
    let rmax = (h.max(w)) as f64;
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let mut spoke = 0usize;
    while kept < target && spoke < 4 * h.max(w) {
        let theta = golden * spoke as f64;
        let (s, c) = theta.sin_cos();
        let steps = (2.0 * rmax) as usize;
        for i in 0..=steps {
            let r = rmax * i as f64 / steps as f64;
            let fy = (r * s).round() as i64;
            let fx = (r * c).round() as i64;
            if fy.abs() as usize > h / 2 || fx.abs() as usize > w / 2 {
                break;
            }
            for (yy, xx) in [(fy, fx), (-fy, -fx)] {
                let iy = yy.rem_euclid(h as i64) as usize;
                let ix = xx.rem_euclid(w as i64) as usize;
                if mask[iy * w + ix] == 0.0 {
                    mask[iy * w + ix] = 1.0;
                    kept += 1;
                }
            }
        }
        spoke += 1;
    }
    Tensor::from_vec(&[h, w], mask)
}

/// Random point-symmetric Fourier mask with roughly `keep_ratio` of the bins
/// sampled; DC is always kept. Symmetry orbits are drawn whole.
pub fn random_symmetric_mask(h: usize, w: usize, keep_ratio: f64, seed: u64) -> Result<Tensor> {
    if !(0.0 < keep_ratio && keep_ratio <= 1.0) {
        return Err(Error::config(format!("mask ratio {keep_ratio} outside (0,1]")));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    use rand::Rng;
    let mut mask = vec![0.0f64; h * w];
    let mut kept = 0usize;
    mask[0] = 1.0;
    kept += 1;
    let target = ((h * w) as f64 * keep_ratio).ceil() as usize;
    // representatives of {k, -k} orbits in a seeded random order
    let mut orbits = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let (mi, mj) = ((h - i) % h, (w - j) % w);
            if (i, j) <= (mi, mj) && (i, j) != (0, 0) {
                orbits.push((i, j, mi, mj));
            }
        }
    }
    // Fisher-Yates
    for i in (1..orbits.len()).rev() {
        let j = rng.gen_range(0..=i);
        orbits.swap(i, j);
    }
    for (i, j, mi, mj) in orbits {
        if kept >= target {
            break;
        }
        mask[i * w + j] = 1.0;
        kept += 1;
        if (mi, mj) != (i, j) {
            mask[mi * w + mj] = 1.0;
            kept += 1;
        }
    }
    Tensor::from_vec(&[h, w], mask)
}

fn check_binary(mask: &Tensor, what: &str) -> Result<()> {
    if mask.shape().len() != 2 {
        return Err(Error::shape(format!("{what}: mask must be [h,w], got {:?}", mask.shape())));
    }
    if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::config(format!("{what}: mask entries must be 0 or 1")));
    }
    Ok(())
}

// ---- the measurement model ---------------------------------------------------

#[derive(Debug, Clone)]
pub enum MeasurementModel {
    BlurDownsample {
        kernel: Tensor,
        factor: usize,
        image_hw: (usize, usize),
        /// Forward FFT of the circularly embedded kernel.
        spectrum: Vec<Complex64>,
    },
    FourierMask {
        mask: Tensor,
    },
    InpaintMask {
        mask: Tensor,
    },
    GenericLinear {
        a: Tensor,
        input_shape: Vec<usize>,
    },
}

impl MeasurementModel {
    /// Circular blur with `kernel` followed by `factor`-fold downsampling on
    /// `image_hw` images.
    pub fn blur_downsample(
        kernel: Tensor,
        factor: usize,
        image_hw: (usize, usize),
    ) -> Result<MeasurementModel> {
        let (h, w) = image_hw;
        if kernel.shape().len() != 2 {
            return Err(Error::shape(format!(
                "blur kernel must be [kh,kw], got {:?}",
                kernel.shape()
            )));
        }
        let (kh, kw) = (kernel.shape()[0], kernel.shape()[1]);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::config(format!("blur kernel extents must be odd, got {kh}x{kw}")));
        }
        if kh > h || kw > w {
            return Err(Error::config(format!(
                "blur kernel {kh}x{kw} larger than image {h}x{w}"
            )));
        }
        if !kernel.is_finite() {
            return Err(Error::numeric("blur kernel has non-finite entries"));
        }
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::config(format!(
                "image {h}x{w} not divisible by downsampling factor {factor}"
            )));
        }
        // embed with the kernel center at the origin, wrapping negatives
        let mut embed = vec![Complex64::default(); h * w];
        let (cy, cx) = (kh / 2, kw / 2);
        for i in 0..kh {
            for j in 0..kw {
                let iy = (i + h - cy) % h;
                let ix = (j + w - cx) % w;
                embed[iy * w + ix] += Complex64::new(kernel.data()[i * kw + j], 0.0);
            }
        }
        let spectrum = fft2(&embed, h, w);
        Ok(MeasurementModel::BlurDownsample { kernel, factor, image_hw, spectrum })
    }

    /// Masked Fourier sampling. `mask` must be binary and point-symmetric
    /// (`mask[-k] == mask[k]`).
    pub fn fourier_mask(mask: Tensor) -> Result<MeasurementModel> {
        check_binary(&mask, "fourier_mask")?;
        let (h, w) = (mask.shape()[0], mask.shape()[1]);
        for i in 0..h {
            for j in 0..w {
                let (mi, mj) = ((h - i) % h, (w - j) % w);
                if mask.data()[i * w + j] != mask.data()[mi * w + mj] {
                    return Err(Error::config(format!(
                        "fourier_mask: mask must be point-symmetric, bins ({i},{j}) and \
                         ({mi},{mj}) differ"
                    )));
                }
            }
        }
        Ok(MeasurementModel::FourierMask { mask })
    }

    pub fn inpaint(mask: Tensor) -> Result<MeasurementModel> {
        check_binary(&mask, "inpaint")?;
        Ok(MeasurementModel::InpaintMask { mask })
    }

    pub fn generic(a: Tensor, input_shape: &[usize]) -> Result<MeasurementModel> {
        if a.shape().len() != 2 {
            return Err(Error::shape(format!("generic operator must be [m,n], got {:?}", a.shape())));
        }
        let n: usize = input_shape.iter().product();
        if a.shape()[1] != n {
            return Err(Error::shape(format!(
                "generic operator has {} columns but input shape {:?} holds {n} entries",
                a.shape()[1],
                input_shape
            )));
        }
        Ok(MeasurementModel::GenericLinear { a, input_shape: input_shape.to_vec() })
    }

    pub fn image_shape(&self) -> Vec<usize> {
        match self {
            MeasurementModel::BlurDownsample { image_hw, .. } => vec![image_hw.0, image_hw.1],
            MeasurementModel::FourierMask { mask } | MeasurementModel::InpaintMask { mask } => {
                mask.shape().to_vec()
            }
            MeasurementModel::GenericLinear { input_shape, .. } => input_shape.clone(),
        }
    }

    pub fn measurement_shape(&self) -> Vec<usize> {
        match self {
            MeasurementModel::BlurDownsample { factor, image_hw, .. } => {
                vec![image_hw.0 / factor, image_hw.1 / factor]
            }
            MeasurementModel::FourierMask { mask } => {
                vec![2, mask.shape()[0], mask.shape()[1]]
            }
            MeasurementModel::InpaintMask { mask } => mask.shape().to_vec(),
            MeasurementModel::GenericLinear { a, .. } => vec![a.shape()[0]],
        }
    }

    fn check_image(&self, x: &Tensor, what: &str) -> Result<()> {
        if x.shape() != self.image_shape().as_slice() {
            return Err(Error::shape(format!(
                "{what}: image {:?} does not match model domain {:?}",
                x.shape(),
                self.image_shape()
            )));
        }
        Ok(())
    }

    fn check_measurement(&self, y: &Tensor, what: &str) -> Result<()> {
        if y.shape() != self.measurement_shape().as_slice() {
            return Err(Error::shape(format!(
                "{what}: measurement {:?} does not match model range {:?}",
                y.shape(),
                self.measurement_shape()
            )));
        }
        Ok(())
    }

    /// `A x`.
    pub fn apply_forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_image(x, "apply_forward")?;
        match self {
            MeasurementModel::BlurDownsample { factor, image_hw, spectrum, .. } => {
                let (h, w) = *image_hw;
                let mut fx = fft2(&to_complex(x), h, w);
                for (v, m) in fx.iter_mut().zip(spectrum) {
                    *v *= m;
                }
                let blurred = ifft2(&fx, h, w);
                let d = *factor;
                let (mh, mw) = (h / d, w / d);
                let mut out = vec![0.0; mh * mw];
                for i in 0..mh {
                    for j in 0..mw {
                        out[i * mw + j] = blurred[(i * d) * w + j * d].re;
                    }
                }
                Tensor::from_vec(&[mh, mw], out)
            }
            MeasurementModel::FourierMask { mask } => {
                let (h, w) = (mask.shape()[0], mask.shape()[1]);
                let scale = 1.0 / ((h * w) as f64).sqrt();
                let fx = fft2(&to_complex(x), h, w);
                let mut out = vec![0.0; 2 * h * w];
                for (i, (v, m)) in fx.iter().zip(mask.data()).enumerate() {
                    out[i] = m * v.re * scale;
                    out[h * w + i] = m * v.im * scale;
                }
                Tensor::from_vec(&[2, h, w], out)
            }
            MeasurementModel::InpaintMask { mask } => Ok(x.mul(mask)),
            MeasurementModel::GenericLinear { a, .. } => {
                let (m, n) = (a.shape()[0], a.shape()[1]);
                let ad = a.data();
                let xd = x.data();
                let out = (0..m)
                    .map(|i| (0..n).map(|j| ad[i * n + j] * xd[j]).sum())
                    .collect();
                Tensor::from_vec(&[m], out)
            }
        }
    }

    /// `A^T u` (true adjoint of [`Self::apply_forward`]).
    pub fn apply_adjoint(&self, u: &Tensor) -> Result<Tensor> {
        self.check_measurement(u, "apply_adjoint")?;
        match self {
            MeasurementModel::BlurDownsample { factor, image_hw, spectrum, .. } => {
                let (h, w) = *image_hw;
                let d = *factor;
                let (mh, mw) = (h / d, w / d);
                let mut up = vec![Complex64::default(); h * w];
                for i in 0..mh {
                    for j in 0..mw {
                        up[(i * d) * w + j * d] = Complex64::new(u.data()[i * mw + j], 0.0);
                    }
                }
                let mut fu = fft2(&up, h, w);
                for (v, m) in fu.iter_mut().zip(spectrum) {
                    *v *= m.conj();
                }
                let back = ifft2(&fu, h, w);
                Tensor::from_vec(&[h, w], back.iter().map(|c| c.re).collect())
            }
            MeasurementModel::FourierMask { mask } => {
                let (h, w) = (mask.shape()[0], mask.shape()[1]);
                let n = h * w;
                let ud = u.data();
                let masked: Vec<Complex64> = (0..n)
                    .map(|i| Complex64::new(ud[i], ud[n + i]) * mask.data()[i])
                    .collect();
                let back = ifft2(&masked, h, w);
                let scale = (n as f64).sqrt();
                Tensor::from_vec(&[h, w], back.iter().map(|c| c.re * scale).collect())
            }
            MeasurementModel::InpaintMask { mask } => Ok(u.mul(mask)),
            MeasurementModel::GenericLinear { a, input_shape } => {
                let (m, n) = (a.shape()[0], a.shape()[1]);
                let ad = a.data();
                let ud = u.data();
                let mut out = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        out[j] += ad[i * n + j] * ud[i];
                    }
                }
                Tensor::from_vec(&input_shape.clone(), out)
            }
        }
    }

    /// Simulated measurements `y = A x + e`. Noise is white Gaussian with
    /// standard deviation `sigma` in the measurement domain, except for the
    /// Fourier variant where the noise is added to the image before the
    /// masked transform: that keeps the measured spectrum
    /// conjugate-symmetric, which the real-domain closed-form prox requires.
    /// `sigma = 0` returns `A x` exactly; identical seeds give identical
    /// draws.
    pub fn simulate(&self, x_gt: &Tensor, sigma: f64, seed: u64) -> Result<Tensor> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::config(format!("noise sigma must be finite and >= 0, got {sigma}")));
        }
        self.check_image(x_gt, "simulate")?;
        if sigma == 0.0 {
            return self.apply_forward(x_gt);
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).unwrap();
        match self {
            MeasurementModel::FourierMask { .. } => {
                let mut noisy = x_gt.clone();
                for v in noisy.data_mut() {
                    *v += normal.sample(&mut rng);
                }
                self.apply_forward(&noisy)
            }
            MeasurementModel::InpaintMask { mask } => {
                let mut y = x_gt.clone();
                for v in y.data_mut() {
                    *v += normal.sample(&mut rng);
                }
                Ok(y.mul(mask))
            }
            _ => {
                let mut y = self.apply_forward(x_gt)?;
                for v in y.data_mut() {
                    *v += normal.sample(&mut rng);
                }
                Ok(y)
            }
        }
    }

    /// The proximal operator of `gamma * g` at `z`, where
    /// `g(x) = 0.5 ||y - A x||^2` (or the consistency indicator for
    /// inpainting): `argmin_x 0.5 ||x - z||^2 + gamma * g(x)`. Closed form
    /// for every variant.
    pub fn prox_data(&self, z: &Tensor, gamma: f64, y: &Tensor) -> Result<Tensor> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::config(format!("prox step gamma must be positive, got {gamma}")));
        }
        self.check_image(z, "prox_data")?;
        self.check_measurement(y, "prox_data")?;
        match self {
            MeasurementModel::BlurDownsample { factor, image_hw, spectrum, .. } => {
                let (h, w) = *image_hw;
                let d = *factor;
                // r = z + gamma * H^T S^T y, then one Woodbury step on the
                // d x d spectrum tiling.
                let sty = self.apply_adjoint(y)?;
                let r = z.add(&sty.scale(gamma));
                let fr = fft2(&to_complex(&r), h, w);
                let (mh, mw) = (h / d, w / d);
                let mut out = vec![Complex64::default(); h * w];
                for ky in 0..mh {
                    for kx in 0..mw {
                        let mut num = Complex64::default();
                        let mut den = (d * d) as f64;
                        for ty in 0..d {
                            for tx in 0..d {
                                let gy = ky + ty * mh;
                                let gx = kx + tx * mw;
                                let m = spectrum[gy * w + gx];
                                num += m * fr[gy * w + gx];
                                den += gamma * m.norm_sqr();
                            }
                        }
                        let wk = num * (gamma / den);
                        for ty in 0..d {
                            for tx in 0..d {
                                let gy = ky + ty * mh;
                                let gx = kx + tx * mw;
                                let m = spectrum[gy * w + gx];
                                out[gy * w + gx] = fr[gy * w + gx] - m.conj() * wk;
                            }
                        }
                    }
                }
                let x = ifft2(&out, h, w);
                Tensor::from_vec(&[h, w], to_real_checked(&x, "blur-downsample prox")?)
            }
            MeasurementModel::FourierMask { mask } => {
                let (h, w) = (mask.shape()[0], mask.shape()[1]);
                let n = h * w;
                let root = (n as f64).sqrt();
                let fz = fft2(&to_complex(z), h, w);
                let yd = y.data();
                let mut merged = Vec::with_capacity(n);
                for i in 0..n {
                    let m = mask.data()[i];
                    // unitary-spectrum measurement, rescaled to the
                    // unnormalized forward convention of fz
                    let yc = Complex64::new(yd[i], yd[n + i]) * root;
                    merged.push((fz[i] + gamma * m * yc) / (1.0 + gamma * m));
                }
                let x = ifft2(&merged, h, w);
                Tensor::from_vec(&[h, w], to_real_checked(&x, "fourier-mask prox")?)
            }
            MeasurementModel::InpaintMask { mask } => {
                // indicator data term: overwrite measured pixels with y
                let mut out = z.clone();
                for ((o, &m), &yv) in out.data_mut().iter_mut().zip(mask.data()).zip(y.data()) {
                    if m != 0.0 {
                        *o = yv;
                    }
                }
                Ok(out)
            }
            MeasurementModel::GenericLinear { a, input_shape } => {
                let (m, n) = (a.shape()[0], a.shape()[1]);
                let ad = a.data();
                // normal matrix I + gamma A^T A
                let mut mat = vec![0.0; n * n];
                for i in 0..n {
                    mat[i * n + i] = 1.0;
                }
                for r in 0..m {
                    let row = &ad[r * n..(r + 1) * n];
                    for i in 0..n {
                        let s = gamma * row[i];
                        if s != 0.0 {
                            for j in 0..n {
                                mat[i * n + j] += s * row[j];
                            }
                        }
                    }
                }
                let aty = self.apply_adjoint(y)?;
                let rhs: Vec<f64> =
                    z.data().iter().zip(aty.data()).map(|(&a, &b)| a + gamma * b).collect();
                let x = spd_solve(&mat, n, &rhs)?;
                Tensor::from_vec(&input_shape.clone(), x)
            }
        }
    }

    /// The linear part of the prox: for the quadratic variants this applies
    /// `(I + gamma A^T A)^{-1}`, for inpainting the complement projector
    /// `I - P`. Because the prox is affine in `z`, this is exactly its
    /// (self-adjoint) Jacobian — the training code backpropagates through
    /// the prox with it.
    pub fn prox_jacobian_apply(&self, v: &Tensor, gamma: f64) -> Result<Tensor> {
        let zero_y = Tensor::zeros(&self.measurement_shape());
        self.prox_data(v, gamma, &zero_y)
    }

    /// Independent oracle for the closed-form prox: conjugate gradients on
    /// the normal equations `(I + gamma A^T A) x = z + gamma A^T y`, built
    /// only from `apply_forward`/`apply_adjoint`. For inpainting this solves
    /// the quadratic (not indicator) data term, so it is an oracle for the
    /// other variants only.
    pub fn prox_cg_oracle(
        &self,
        z: &Tensor,
        gamma: f64,
        y: &Tensor,
        tol: f64,
        max_iters: usize,
    ) -> Result<Tensor> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::config(format!("prox step gamma must be positive, got {gamma}")));
        }
        self.check_image(z, "prox_cg_oracle")?;
        self.check_measurement(y, "prox_cg_oracle")?;
        let rhs = z.add(&self.apply_adjoint(y)?.scale(gamma));
        let (x, _, _) = conjugate_gradient(
            |v| {
                let ata = self.apply_adjoint(&self.apply_forward(v)?)?;
                Ok(v.add(&ata.scale(gamma)))
            },
            &rhs,
            tol,
            max_iters,
        )?;
        Ok(x)
    }
}

// ---- plain-text kernel files -------------------------------------------------

/// Parse a blur kernel from plain text: one row per line, entries separated
/// by whitespace.
pub fn parse_kernel_text(text: &str) -> Result<Tensor> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::format(format!("kernel line {}: bad number {tok:?}", ln + 1)))
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::format(format!(
                    "kernel line {}: {} entries, expected {}",
                    ln + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::format("kernel file holds no rows"));
    }
    let (h, w) = (rows.len(), rows[0].len());
    let t = Tensor::from_vec(&[h, w], rows.concat())?;
    if !t.is_finite() {
        return Err(Error::format("kernel file holds non-finite values"));
    }
    Ok(t)
}

pub fn kernel_to_text(kernel: &Tensor) -> String {
    let (h, w) = (kernel.shape()[0], kernel.shape()[1]);
    let mut out = String::new();
    for i in 0..h {
        let row: Vec<String> =
            (0..w).map(|j| format!("{}", kernel.data()[i * w + j])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_l2(a: &Tensor, b: &Tensor) -> f64 {
        a.sub(b).norm2() / b.norm2().max(1e-300)
    }

    fn sample_models(hw: usize) -> Vec<MeasurementModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        vec![
            MeasurementModel::blur_downsample(
                gaussian_kernel(5, 1.6).unwrap(),
                2,
                (hw, hw),
            )
            .unwrap(),
            MeasurementModel::fourier_mask(random_symmetric_mask(hw, hw, 0.3, 5).unwrap())
                .unwrap(),
            MeasurementModel::inpaint(random_inpaint_mask(hw, hw, 0.5, 6).unwrap()).unwrap(),
            MeasurementModel::generic(
                Tensor::randn(&[hw * hw / 2, hw * hw], &mut rng),
                &[hw, hw],
            )
            .unwrap(),
        ]
    }

    #[test]
    fn fft_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn(&[6 * 8], &mut rng);
        let f = fft2(&to_complex(&x.reshape(&[6, 8]).unwrap()), 6, 8);
        let back = ifft2(&f, 6, 8);
        for (a, b) in x.data().iter().zip(&back) {
            assert!((a - b.re).abs() < 1e-12 && b.im.abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_identity_for_every_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for model in sample_models(8) {
            let x = Tensor::randn(&model.image_shape(), &mut rng);
            let u = Tensor::randn(&model.measurement_shape(), &mut rng);
            let lhs = model.apply_forward(&x).unwrap().dot(&u);
            let rhs = x.dot(&model.apply_adjoint(&u).unwrap());
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            assert!(
                (lhs - rhs).abs() <= 1e-10 * scale,
                "adjoint mismatch: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn blur_with_delta_kernel_is_plain_downsampling() {
        let mut delta = Tensor::zeros(&[3, 3]);
        delta.data_mut()[4] = 1.0;
        let model = MeasurementModel::blur_downsample(delta, 2, (6, 6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(&[6, 6], &mut rng);
        let y = model.apply_forward(&x).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((y.data()[i * 3 + j] - x.data()[(2 * i) * 6 + 2 * j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn closed_form_prox_matches_cg_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for model in sample_models(8) {
            if matches!(model, MeasurementModel::InpaintMask { .. }) {
                continue; // indicator data term; checked separately
            }
            let x_gt = Tensor::randn(&model.image_shape(), &mut rng);
            let y = model.simulate(&x_gt, 0.05, 11).unwrap();
            let z = Tensor::randn(&model.image_shape(), &mut rng);
            for gamma in [0.3, 1.0, 4.0] {
                let closed = model.prox_data(&z, gamma, &y).unwrap();
                let oracle = model.prox_cg_oracle(&z, gamma, &y, 1e-12, 4000).unwrap();
                let err = rel_l2(&closed, &oracle);
                assert!(err <= 1e-6, "gamma {gamma}: prox vs CG rel err {err:.3e}");
                // first-order optimality: x - z + gamma A^T (A x - y) = 0
                let ax = model.apply_forward(&closed).unwrap();
                let res = closed
                    .sub(&z)
                    .add(&model.apply_adjoint(&ax.sub(&y)).unwrap().scale(gamma));
                assert!(
                    res.norm2() <= 1e-6 * z.norm2(),
                    "optimality residual {:.3e}",
                    res.norm2()
                );
            }
        }
    }

    #[test]
    fn cg_oracle_matches_dense_solve_on_generic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 8;
        let a = Tensor::randn(&[5, n], &mut rng);
        let model = MeasurementModel::generic(a.clone(), &[n]).unwrap();
        let z = Tensor::randn(&[n], &mut rng);
        let y = Tensor::randn(&[5], &mut rng);
        let gamma = 0.7;
        let mut mat = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = if i == j { 1.0 } else { 0.0 };
                for r in 0..5 {
                    s += gamma * a.data()[r * n + i] * a.data()[r * n + j];
                }
                mat[i * n + j] = s;
            }
        }
        let aty = model.apply_adjoint(&y).unwrap();
        let rhs: Vec<f64> =
            z.data().iter().zip(aty.data()).map(|(&p, &q)| p + gamma * q).collect();
        let dense = spd_solve(&mat, n, &rhs).unwrap();
        let cg = model.prox_cg_oracle(&z, gamma, &y, 1e-13, 500).unwrap();
        for i in 0..n {
            assert!((dense[i] - cg.data()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn cg_oracle_degenerate_cases() {
        // A = 0: prox is the identity in z
        let model = MeasurementModel::generic(Tensor::zeros(&[3, 4]), &[4]).unwrap();
        let z = Tensor::from_vec(&[4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let y = Tensor::zeros(&[3]);
        let x = model.prox_cg_oracle(&z, 1.0, &y, 1e-12, 50).unwrap();
        assert!(rel_l2(&x, &z) < 1e-10);

        // A = I (full inpainting mask has A^T A = I), gamma = 1: (z + y) / 2
        let model = MeasurementModel::inpaint(Tensor::ones(&[2, 2])).unwrap();
        let z = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 1.0, 2.0]).unwrap();
        let x = model.prox_cg_oracle(&z, 1.0, &y, 1e-12, 50).unwrap();
        let expect = z.add(&y).scale(0.5);
        assert!(rel_l2(&x, &expect) < 1e-10);
    }

    #[test]
    fn inpaint_prox_is_exact() {
        let mask = random_inpaint_mask(8, 8, 0.4, 9).unwrap();
        let model = MeasurementModel::inpaint(mask.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x_gt = Tensor::randn(&[8, 8], &mut rng);
        let y = model.simulate(&x_gt, 0.0, 0).unwrap();
        let z = Tensor::randn(&[8, 8], &mut rng);
        let x = model.prox_data(&z, 2.5, &y).unwrap();
        for i in 0..64 {
            if mask.data()[i] != 0.0 {
                // measured pixels are y, bit for bit
                assert_eq!(x.data()[i], y.data()[i]);
            } else {
                assert_eq!(x.data()[i], z.data()[i]);
            }
        }
        // and the step size is irrelevant
        assert_eq!(x, model.prox_data(&z, 0.01, &y).unwrap());
    }

    #[test]
    fn prox_jacobian_is_prox_with_zero_data() {
        // linearity of the prox in z: prox(z) - prox(0) = J z
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for model in sample_models(8) {
            let y = model
                .simulate(&Tensor::randn(&model.image_shape(), &mut rng), 0.02, 3)
                .unwrap();
            let z = Tensor::randn(&model.image_shape(), &mut rng);
            let v = Tensor::randn(&model.image_shape(), &mut rng);
            let gamma = 0.8;
            let base = model.prox_data(&z, gamma, &y).unwrap();
            let shifted = model.prox_data(&z.add(&v), gamma, &y).unwrap();
            let jv = model.prox_jacobian_apply(&v, gamma).unwrap();
            assert!(rel_l2(&shifted.sub(&base), &jv) < 1e-9);
        }
    }

    #[test]
    fn simulate_noise_statistics_and_determinism() {
        // delta kernel, no downsampling: y - x is exactly the noise field
        let mut delta = Tensor::zeros(&[3, 3]);
        delta.data_mut()[4] = 1.0;
        let model = MeasurementModel::blur_downsample(delta, 1, (100, 100)).unwrap();
        let x = Tensor::zeros(&[100, 100]);
        let sigma = 0.3;
        let y = model.simulate(&x, sigma, 42).unwrap();
        let n = y.numel() as f64;
        let mean = y.sum() / n;
        let var = y.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!(
            (std - sigma).abs() <= 0.05 * sigma,
            "empirical std {std} vs sigma {sigma}"
        );
        assert_eq!(y, model.simulate(&x, sigma, 42).unwrap());
        assert_ne!(y, model.simulate(&x, sigma, 43).unwrap());

        // sigma = 0 reproduces A x exactly
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::randn(&[100, 100], &mut rng);
        assert_eq!(
            model.simulate(&x, 0.0, 1).unwrap(),
            model.apply_forward(&x).unwrap()
        );
    }

    #[test]
    fn fourier_mask_requires_point_symmetry() {
        let mut mask = Tensor::zeros(&[4, 4]);
        mask.data_mut()[1] = 1.0; // bin (0,1) without its mirror (0,3)
        assert!(matches!(
            MeasurementModel::fourier_mask(mask),
            Err(Error::Config(_))
        ));
        let sym = random_symmetric_mask(4, 4, 0.5, 1).unwrap();
        assert!(MeasurementModel::fourier_mask(sym).is_ok());
    }

    #[test]
    fn pseudo_radial_mask_is_symmetric_and_dense_enough() {
        for ratio in [0.1, 0.2] {
            let m = pseudo_radial_mask(16, 16, ratio).unwrap();
            assert!(MeasurementModel::fourier_mask(m.clone()).is_ok());
            let frac = m.sum() / 256.0;
            assert!(frac >= ratio, "got fraction {frac} for target {ratio}");
        }
    }

    #[test]
    fn kernel_text_roundtrip_and_errors() {
        let k = gaussian_kernel(3, 0.8).unwrap();
        let parsed = parse_kernel_text(&kernel_to_text(&k)).unwrap();
        assert_eq!(parsed, k);
        assert!(parse_kernel_text("1 2\n3\n").is_err());
        assert!(parse_kernel_text("").is_err());
        assert!(parse_kernel_text("1 x\n").is_err());
    }

    #[test]
    fn constructors_validate() {
        // even kernel extent
        assert!(MeasurementModel::blur_downsample(Tensor::ones(&[2, 2]), 1, (8, 8)).is_err());
        // image not divisible by factor
        assert!(MeasurementModel::blur_downsample(Tensor::ones(&[3, 3]), 3, (8, 8)).is_err());
        // non-binary inpainting mask
        assert!(MeasurementModel::inpaint(Tensor::full(&[4, 4], 0.5)).is_err());
        // generic shape mismatch
        assert!(MeasurementModel::generic(Tensor::zeros(&[3, 5]), &[2, 2]).is_err());
        // measurement shape mismatch surfaces as a shape error
        let model = MeasurementModel::inpaint(Tensor::ones(&[4, 4])).unwrap();
        assert!(matches!(
            model.prox_data(&Tensor::zeros(&[4, 4]), 1.0, &Tensor::zeros(&[3, 3])),
            Err(Error::Shape(_))
        ));
    }
}
