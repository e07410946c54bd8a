//! C ABI over `sphereprod`.
//!
//! Every function returns an [`SpStatus`]; results come back through out
//! pointers. On failure the message is kept per thread and can be copied out
//! with [`sp_last_error_message`]. Handles are opaque and must be released
//! with their `_free` function. Panics never cross the boundary; they are
//! reported as `SP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ndarray::Array2;
use sphereprod::data_io::BinaryImageDataset;
use sphereprod::nn_core::{sigmoid, Checkpoint};
use sphereprod::rng::{stream, StreamRng};
use sphereprod::special_math::{bessel_ratio, log_bessel_i, BesselOrder};
use sphereprod::vae::{evaluate, iwae_log_likelihood, VaeModel};
use sphereprod::vmf::{entropy, kl_grad_kappa, kl_to_uniform, log_normalizer};
use sphereprod::{CompositionSpec, Error, ProductVmf, UnitVector, VmfDistribution};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Parse = 4,
    DimensionMismatch = 5,
    Io = 6,
    Data = 7,
    Checkpoint = 8,
    Divergence = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// Seeded ChaCha8 random stream.
pub struct SpRng {
    inner: StreamRng,
}

/// Parsed sphere composition.
pub struct SpComposition {
    inner: CompositionSpec,
}

/// Product of vMF distributions, one per shell.
pub struct SpProductVmf {
    inner: ProductVmf,
}

/// Trained VAE loaded from a checkpoint.
pub struct SpModel {
    inner: VaeModel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure {
    status: SpStatus,
    message: String,
}

impl Failure {
    fn new(status: SpStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Domain { .. }
            | Error::NotUnit { .. }
            | Error::DegenerateVector { .. }
            | Error::Antipodal => SpStatus::Domain,
            Error::Parse { .. } => SpStatus::Parse,
            Error::DimensionMismatch { .. } | Error::Shape { .. } => SpStatus::DimensionMismatch,
            Error::Io { .. } => SpStatus::Io,
            Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::DimensionOverflow { .. }
            | Error::Data(_)
            | Error::InvalidTarget { .. } => SpStatus::Data,
            Error::Checkpoint(_) => SpStatus::Checkpoint,
            Error::Divergence(_) | Error::DegeneratePosterior { .. } => SpStatus::Divergence,
            _ => SpStatus::InvalidArgument,
        };
        Self::new(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure::new(SpStatus::Panic, format!("panic: {msg}")))
    });
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            SpStatus::Ok
        }
        Err(f) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = f.message);
            f.status
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::new(SpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn in_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn in_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn in_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure::new(
            SpStatus::InvalidArgument,
            format!("{what} is not valid UTF-8"),
        )
    })
}

/// Copies `text` plus a NUL into `buf` when it fits; `needed` always gets the
/// full size including the NUL.
unsafe fn copy_out_str(
    text: &str,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> Result<(), Failure> {
    let size = text.len() + 1;
    if let Some(n) = needed.as_mut() {
        *n = size;
    }
    if len < size {
        return Err(Failure::new(
            SpStatus::BufferTooSmall,
            format!("buffer holds {len} bytes, {size} needed"),
        ));
    }
    let dst = out_slice(buf.cast::<u8>(), len, "buf")?;
    dst[..text.len()].copy_from_slice(text.as_bytes());
    dst[text.len()] = 0;
    Ok(())
}

unsafe fn write_scalar(out: *mut f64, value: impl FnOnce() -> Result<f64, Error>) -> SpStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = value()?;
        Ok(())
    })
}

/// Copies the calling thread's last error message into `buf`. `needed`
/// (nullable) receives the size including the terminating NUL. An empty
/// string means the last call succeeded.
///
/// # Safety
/// `buf` must be writable for `len` bytes; `needed` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn sp_last_error_message(
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> SpStatus {
    let text = LAST_ERROR.with(|e| e.borrow().clone());
    let outcome = catch_unwind(AssertUnwindSafe(|| copy_out_str(&text, buf, len, needed)));
    match outcome {
        Ok(Ok(())) => SpStatus::Ok,
        Ok(Err(f)) => f.status,
        Err(_) => SpStatus::Panic,
    }
}

/// `ln I_v(x)`.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn sp_log_bessel_i(v: f64, x: f64, out: *mut f64) -> SpStatus {
    write_scalar(out, || log_bessel_i(BesselOrder::new(v)?, x))
}

/// `I_{m/2}(κ) / I_{m/2-1}(κ)`.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn sp_bessel_ratio(m: usize, kappa: f64, out: *mut f64) -> SpStatus {
    write_scalar(out, || bessel_ratio(m, kappa))
}

/// Log normalizer of the vMF on the unit sphere in `R^m`.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn sp_vmf_log_normalizer(m: usize, kappa: f64, out: *mut f64) -> SpStatus {
    write_scalar(out, || log_normalizer(m, kappa))
}

/// KL divergence from the vMF to the uniform distribution.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn sp_vmf_kl_to_uniform(m: usize, kappa: f64, out: *mut f64) -> SpStatus {
    write_scalar(out, || kl_to_uniform(m, kappa))
}

/// Derivative of [`sp_vmf_kl_to_uniform`] in `kappa`.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn sp_vmf_kl_grad_kappa(m: usize, kappa: f64, out: *mut f64) -> SpStatus {
    write_scalar(out, || kl_grad_kappa(m, kappa))
}

/// Differential entropy of the vMF.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn sp_vmf_entropy(m: usize, kappa: f64, out: *mut f64) -> SpStatus {
    write_scalar(out, || entropy(m, kappa))
}

/// # Safety
/// `out` must be a valid pointer; free the handle with [`sp_rng_free`].
#[no_mangle]
pub unsafe extern "C" fn sp_rng_new(seed: u64, out: *mut *mut SpRng) -> SpStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = Box::into_raw(Box::new(SpRng {
            inner: stream(seed, "ffi", 0),
        }));
        Ok(())
    })
}

/// # Safety
/// `rng` must be null or a handle from [`sp_rng_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sp_rng_free(rng: *mut SpRng) {
    if !rng.is_null() {
        drop(Box::from_raw(rng));
    }
}

/// Parses a composition such as `s10x9*3`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_composition_parse(
    text: *const c_char,
    out: *mut *mut SpComposition,
) -> SpStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let spec = CompositionSpec::parse(in_str(text, "text")?)?;
        *out = Box::into_raw(Box::new(SpComposition { inner: spec }));
        Ok(())
    })
}

/// # Safety
/// `spec` must be null or a live composition handle.
#[no_mangle]
pub unsafe extern "C" fn sp_composition_free(spec: *mut SpComposition) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Shell count, ambient dimension `Σ(k_i+1)` and degrees of freedom `Σ k_i`.
/// Any out pointer may be null.
///
/// # Safety
/// `spec` must be a live composition handle.
#[no_mangle]
pub unsafe extern "C" fn sp_composition_info(
    spec: *const SpComposition,
    shells: *mut usize,
    ambient_dim: *mut usize,
    dof: *mut usize,
) -> SpStatus {
    guard(|| {
        let spec = &in_ref(spec, "spec")?.inner;
        if let Some(s) = shells.as_mut() {
            *s = spec.shell_count();
        }
        if let Some(a) = ambient_dim.as_mut() {
            *a = spec.ambient_dim();
        }
        if let Some(d) = dof.as_mut() {
            *d = spec.dof();
        }
        Ok(())
    })
}

/// Copies the sphere dimensions `k_i` into `dims` (length `len`, at least the
/// shell count).
///
/// # Safety
/// `spec` must be a live handle and `dims` writable for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn sp_composition_dims(
    spec: *const SpComposition,
    dims: *mut usize,
    len: usize,
) -> SpStatus {
    guard(|| {
        let spec = &in_ref(spec, "spec")?.inner;
        let n = spec.shell_count();
        if len < n {
            return Err(Failure::new(
                SpStatus::BufferTooSmall,
                format!("{n} shells, buffer holds {len}"),
            ));
        }
        out_slice(dims, len, "dims")?[..n].copy_from_slice(spec.dims());
        Ok(())
    })
}

/// Canonical text form, e.g. `s10x9*3`.
///
/// # Safety
/// `spec` must be a live handle, `buf` writable for `len` bytes, `needed`
/// null or valid.
#[no_mangle]
pub unsafe extern "C" fn sp_composition_to_string(
    spec: *const SpComposition,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> SpStatus {
    guard(|| copy_out_str(&in_ref(spec, "spec")?.inner.to_string(), buf, len, needed))
}

/// Builds a product of vMFs. `mus` holds the unit mean directions of all
/// shells back to back (`ambient_dim` values); `kappas` one concentration per
/// shell.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sp_product_vmf_new(
    spec: *const SpComposition,
    mus: *const f64,
    mus_len: usize,
    kappas: *const f64,
    kappas_len: usize,
    out: *mut *mut SpProductVmf,
) -> SpStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let spec = &in_ref(spec, "spec")?.inner;
        let mus = in_slice(mus, mus_len, "mus")?;
        let kappas = in_slice(kappas, kappas_len, "kappas")?;
        if mus.len() != spec.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.ambient_dim(),
                got: mus.len(),
            }
            .into());
        }
        if kappas.len() != spec.shell_count() {
            return Err(Error::DimensionMismatch {
                expected: spec.shell_count(),
                got: kappas.len(),
            }
            .into());
        }
        let shells = spec
            .shell_ranges()
            .into_iter()
            .zip(kappas)
            .map(|(r, &k)| VmfDistribution::new(UnitVector::from_unit(mus[r].to_vec(), 1e-9)?, k))
            .collect::<Result<Vec<_>, Error>>()?;
        let inner = ProductVmf::new(spec.clone(), shells)?;
        *out = Box::into_raw(Box::new(SpProductVmf { inner }));
        Ok(())
    })
}

/// # Safety
/// `q` must be null or a live product-vMF handle.
#[no_mangle]
pub unsafe extern "C" fn sp_product_vmf_free(q: *mut SpProductVmf) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// Draws one point into `z` (`len` must equal the ambient dimension).
///
/// # Safety
/// Handles must be live; `z` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sp_product_vmf_sample(
    q: *const SpProductVmf,
    rng: *mut SpRng,
    z: *mut f64,
    len: usize,
) -> SpStatus {
    guard(|| {
        let q = &in_ref(q, "q")?.inner;
        let rng = &mut out_ref(rng, "rng")?.inner;
        let ambient = q.spec().ambient_dim();
        if len != ambient {
            return Err(Error::DimensionMismatch {
                expected: ambient,
                got: len,
            }
            .into());
        }
        let dst = out_slice(z, len, "z")?;
        let (sample, _) = q.sample(rng)?;
        dst.copy_from_slice(&sample.coords);
        Ok(())
    })
}

/// Log density of `z` under the product.
///
/// # Safety
/// `q` must be live, `z` readable for `len` doubles, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sp_product_vmf_log_prob(
    q: *const SpProductVmf,
    z: *const f64,
    len: usize,
    out: *mut f64,
) -> SpStatus {
    guard(|| {
        let q = &in_ref(q, "q")?.inner;
        let out = out_ref(out, "out")?;
        *out = q.log_prob_coords(in_slice(z, len, "z")?)?;
        Ok(())
    })
}

/// Total KL to the uniform product prior; `per_shell` (nullable) receives the
/// shell terms when `per_shell_len` covers every shell.
///
/// # Safety
/// `q` must be live, `total` valid, `per_shell` null or writable.
#[no_mangle]
pub unsafe extern "C" fn sp_product_vmf_kl(
    q: *const SpProductVmf,
    total: *mut f64,
    per_shell: *mut f64,
    per_shell_len: usize,
) -> SpStatus {
    guard(|| {
        let q = &in_ref(q, "q")?.inner;
        let total = out_ref(total, "total")?;
        let kl = q.kl();
        if !per_shell.is_null() {
            let n = kl.per_shell.len();
            if per_shell_len < n {
                return Err(Failure::new(
                    SpStatus::BufferTooSmall,
                    format!("{n} shells, buffer holds {per_shell_len}"),
                ));
            }
            out_slice(per_shell, per_shell_len, "per_shell")?[..n].copy_from_slice(&kl.per_shell);
        }
        *total = kl.total;
        Ok(())
    })
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sp_model_load(path: *const c_char, out: *mut *mut SpModel) -> SpStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let ckpt = Checkpoint::read(Path::new(in_str(path, "path")?))?;
        let inner = VaeModel::from_checkpoint(&ckpt)?;
        *out = Box::into_raw(Box::new(SpModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn sp_model_free(model: *mut SpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Image height and width, and a new handle to the model's composition
/// (free it with [`sp_composition_free`]). Out pointers may be null.
///
/// # Safety
/// `model` must be live.
#[no_mangle]
pub unsafe extern "C" fn sp_model_info(
    model: *const SpModel,
    height: *mut usize,
    width: *mut usize,
    composition: *mut *mut SpComposition,
) -> SpStatus {
    guard(|| {
        let m = &in_ref(model, "model")?.inner;
        if let Some(h) = height.as_mut() {
            *h = m.image_height;
        }
        if let Some(w) = width.as_mut() {
            *w = m.image_width;
        }
        if let Some(c) = composition.as_mut() {
            *c = Box::into_raw(Box::new(SpComposition {
                inner: m.spec.clone(),
            }));
        }
        Ok(())
    })
}

unsafe fn input_matrix(
    model: &VaeModel,
    x: *const f64,
    rows: usize,
) -> Result<Array2<f64>, Failure> {
    let cols = model.input_dim();
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Failure::new(SpStatus::InvalidArgument, "rows * pixels overflows"))?;
    let data = in_slice(x, len, "x")?;
    Ok(Array2::from_shape_vec((rows, cols), data.to_vec()).expect("length checked"))
}

/// Posterior parameters for `rows` images (row-major, `height*width` values
/// each). `mu` receives `rows * ambient_dim` values, `kappa` `rows * shells`.
///
/// # Safety
/// `x` must hold `rows * height * width` doubles; `mu` and `kappa` must be
/// writable for their lengths.
#[no_mangle]
pub unsafe extern "C" fn sp_model_encode(
    model: *const SpModel,
    x: *const f64,
    rows: usize,
    mu: *mut f64,
    mu_len: usize,
    kappa: *mut f64,
    kappa_len: usize,
) -> SpStatus {
    guard(|| {
        let m = &in_ref(model, "model")?.inner;
        let x = input_matrix(m, x, rows)?;
        let post = m.encode(&x)?;
        let mu_out = out_slice(mu, mu_len, "mu")?;
        let kappa_out = out_slice(kappa, kappa_len, "kappa")?;
        if mu_len != post.mu.len() || kappa_len != post.kappa.len() {
            return Err(Failure::new(
                SpStatus::DimensionMismatch,
                format!(
                    "need {} mu and {} kappa values",
                    post.mu.len(),
                    post.kappa.len()
                ),
            ));
        }
        mu_out.copy_from_slice(post.mu.as_slice().expect("standard layout"));
        kappa_out.copy_from_slice(post.kappa.as_slice().expect("standard layout"));
        Ok(())
    })
}

/// Pixel probabilities for `rows` latent points of `ambient_dim` values each.
///
/// # Safety
/// `z` must hold `rows * ambient_dim` doubles and `probs` be writable for
/// `probs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sp_model_decode(
    model: *const SpModel,
    z: *const f64,
    rows: usize,
    probs: *mut f64,
    probs_len: usize,
) -> SpStatus {
    guard(|| {
        let m = &in_ref(model, "model")?.inner;
        let a = m.spec.ambient_dim();
        let len = rows
            .checked_mul(a)
            .ok_or_else(|| Failure::new(SpStatus::InvalidArgument, "rows * dims overflows"))?;
        let z = Array2::from_shape_vec((rows, a), in_slice(z, len, "z")?.to_vec())
            .expect("length checked");
        let logits = m.decode_logits(&z)?;
        if probs_len != logits.len() {
            return Err(Failure::new(
                SpStatus::DimensionMismatch,
                format!("need {} probabilities", logits.len()),
            ));
        }
        for (o, l) in out_slice(probs, probs_len, "probs")?
            .iter_mut()
            .zip(logits.iter())
        {
            *o = sigmoid(*l);
        }
        Ok(())
    })
}

/// Single-sample ELBO, reconstruction and KL, averaged over `rows` binary
/// images. Out pointers may be null.
///
/// # Safety
/// `x` must hold `rows * height * width` doubles; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn sp_model_elbo(
    model: *const SpModel,
    x: *const f64,
    rows: usize,
    rng: *mut SpRng,
    elbo: *mut f64,
    re: *mut f64,
    kl: *mut f64,
) -> SpStatus {
    guard(|| {
        let m = &in_ref(model, "model")?.inner;
        let rng = &mut out_ref(rng, "rng")?.inner;
        let data =
            BinaryImageDataset::new(input_matrix(m, x, rows)?, m.image_height, m.image_width)?;
        let metrics = evaluate(m, &data, rng)?;
        for (p, v) in [(elbo, metrics.elbo), (re, metrics.re), (kl, metrics.kl)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Importance-sampled `log p(x)` with `k` samples, averaged over rows.
///
/// # Safety
/// `x` must hold `rows * height * width` doubles; handles and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sp_model_iwae(
    model: *const SpModel,
    x: *const f64,
    rows: usize,
    k: usize,
    rng: *mut SpRng,
    out: *mut f64,
) -> SpStatus {
    guard(|| {
        let m = &in_ref(model, "model")?.inner;
        let rng = &mut out_ref(rng, "rng")?.inner;
        let out = out_ref(out, "out")?;
        let x = input_matrix(m, x, rows)?;
        *out = iwae_log_likelihood(m, &x, k, rng)?.mean;
        Ok(())
    })
}
