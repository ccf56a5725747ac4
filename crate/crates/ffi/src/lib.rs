//! C ABI over the numerical kernels of `latent-states`.
//!
//! Every function returns an [`LsStatus`]. On failure a message is kept per
//! thread and can be read with [`ls_last_error`]. Matrices are dense,
//! row-major `f64` buffers. Results that own memory are opaque handles
//! released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use chrono::NaiveDate;
use latent_states::cluster::{kmeans, silhouette, ClusterModel, KMeansConfig};
use latent_states::embed::triplet_loss;
use latent_states::period::Period;
use latent_states::predict::loocv::loocv_evaluate;
use latent_states::reduce::{tsne, TsneConfig, TsneResult};
use latent_states::transition::{
    build_transition_matrix, distance_quantile, pagerank, participant_state_vector, LabeledPoint, StatesConfig,
    Threshold, TransitionMatrix, TransitionMode, MIN_THRESHOLD,
};
use latent_states::Error;

/// Status codes. Library error classes share their numbers with the
/// command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Io = 3,
    Parse = 4,
    InvalidInput = 5,
    Degenerate = 6,
    Numerical = 7,
    Panic = 8,
    BufferTooSmall = 9,
}

/// Transition counting rule for [`ls_transition_matrix`] and [`ls_state_vector`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsTransitionMode {
    Proximity = 0,
    Temporal = 1,
}

/// A fitted k-means model.
pub struct LsKMeans {
    model: ClusterModel,
    dim: usize,
}

/// A finished t-SNE run.
pub struct LsTsne {
    result: TsneResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(LsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            2 => LsStatus::Config,
            3 => LsStatus::Io,
            4 => LsStatus::Parse,
            5 => LsStatus::InvalidInput,
            6 => LsStatus::Degenerate,
            _ => LsStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(LsStatus::InvalidInput, msg.into())
}

type Outcome = Result<(), Failure>;

fn guard(f: impl FnOnce() -> Outcome) -> LsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            LsStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure(LsStatus::NullPointer, format!("{name} is null")));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a, T>(ptr: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Failure(LsStatus::NullPointer, format!("{name} is null")));
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

unsafe fn out_value<T>(ptr: *mut T, value: T, name: &str) -> Outcome {
    if ptr.is_null() {
        return Err(Failure(LsStatus::NullPointer, format!("{name} is null")));
    }
    ptr.write(value);
    Ok(())
}

fn rows(data: &[f64], n: usize, d: usize) -> Vec<Vec<f64>> {
    data.chunks(d.max(1)).take(n).map(<[f64]>::to_vec).collect()
}

fn size(n: usize, d: usize, name: &str) -> Result<usize, Failure> {
    n.checked_mul(d).ok_or_else(|| invalid(format!("{name} dimensions overflow")))
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ls_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ls_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Damped PageRank of a `k x k` row-stochastic matrix. Writes `k` values to
/// `out` and the iteration count to `iterations` (which may be null).
///
/// # Safety
/// `matrix` must hold `k * k` values and `out` room for `k`.
#[no_mangle]
pub unsafe extern "C" fn ls_pagerank(
    matrix: *const f64,
    k: usize,
    alpha: f64,
    max_iter: usize,
    tol: f64,
    out: *mut f64,
    iterations: *mut usize,
) -> LsStatus {
    guard(|| {
        let m = input(matrix, size(k, k, "matrix")?, "matrix")?;
        let out = output(out, k, "out")?;
        let t = TransitionMatrix { k, entries: rows(m, k, k) };
        let pr = pagerank(&t, alpha, max_iter, tol)?;
        out.copy_from_slice(&pr.values);
        if !iterations.is_null() {
            iterations.write(pr.iterations);
        }
        Ok(())
    })
}

unsafe fn labeled_points(
    xy: *const f64,
    labels: *const usize,
    days: *const i64,
    n: usize,
) -> Result<Vec<LabeledPoint>, Failure> {
    let xy = input(xy, size(n, 2, "points")?, "points")?;
    let labels = input(labels, n, "labels")?;
    let days = input(days, n, "days")?;
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
    (0..n)
        .map(|i| {
            let date = epoch
                .checked_add_signed(chrono::Duration::try_days(days[i]).ok_or_else(|| invalid("day out of range"))?)
                .ok_or_else(|| invalid(format!("day {} out of range", days[i])))?;
            Ok(LabeledPoint { participant_id: String::new(), date, x: xy[2 * i], y: xy[2 * i + 1], label: labels[i] })
        })
        .collect()
}

fn mode_of(mode: LsTransitionMode) -> TransitionMode {
    match mode {
        LsTransitionMode::Proximity => TransitionMode::Proximity,
        LsTransitionMode::Temporal => TransitionMode::Temporal,
    }
}

/// Row-stochastic transition matrix between `k` states of one participant's
/// days. `xy` holds `n` interleaved 2D coordinates, `labels` the state of each
/// day and `days` its date as days since 1970-01-01. `threshold` is the
/// proximity distance and is ignored in temporal mode. Writes `k * k` values.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn ls_transition_matrix(
    xy: *const f64,
    labels: *const usize,
    days: *const i64,
    n: usize,
    k: usize,
    threshold: f64,
    mode: LsTransitionMode,
    out: *mut f64,
) -> LsStatus {
    guard(|| {
        let points = labeled_points(xy, labels, days, n)?;
        let out = output(out, size(k, k, "out")?, "out")?;
        let t = build_transition_matrix(&points, k, threshold, mode_of(mode))?;
        for (dst, row) in out.chunks_mut(k).zip(&t.entries) {
            dst.copy_from_slice(row);
        }
        Ok(())
    })
}

/// State vector of one participant-period: the transition matrix of
/// [`ls_transition_matrix`] with the proximity threshold set to the
/// `quantile` of pairwise day distances, then PageRank. Writes `k` values.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn ls_state_vector(
    xy: *const f64,
    labels: *const usize,
    days: *const i64,
    n: usize,
    k: usize,
    quantile: f64,
    mode: LsTransitionMode,
    alpha: f64,
    out: *mut f64,
) -> LsStatus {
    guard(|| {
        let points = labeled_points(xy, labels, days, n)?;
        let out = output(out, k, "out")?;
        if !(0.0..=1.0).contains(&quantile) {
            return Err(invalid(format!("quantile must lie in [0, 1], got {quantile}")));
        }
        let first = points.iter().map(|p| p.date).min().ok_or_else(|| invalid("no days"))?;
        let last = points.iter().map(|p| p.date).max().expect("non-empty");
        let period = Period::new(first, last.succ_opt().ok_or_else(|| invalid("day out of range"))?)?;
        let cfg = StatesConfig { k, alpha, mode: mode_of(mode), threshold: Threshold::Quantile(quantile), ..Default::default() };
        let rec = participant_state_vector("", period, &points, &cfg)?;
        out.copy_from_slice(&rec.state.values);
        Ok(())
    })
}

/// The proximity threshold [`ls_state_vector`] would use.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn ls_distance_quantile(xy: *const f64, n: usize, quantile: f64, out: *mut f64) -> LsStatus {
    guard(|| {
        let xy = input(xy, size(n, 2, "points")?, "points")?;
        let points: Vec<LabeledPoint> = xy
            .chunks(2)
            .map(|c| LabeledPoint { participant_id: String::new(), date: NaiveDate::MIN, x: c[0], y: c[1], label: 0 })
            .collect();
        out_value(out, distance_quantile(&points, quantile).unwrap_or(MIN_THRESHOLD), "out")
    })
}

/// k-means with k-means++ seeding and restarts on `n` points of dimension `d`.
///
/// # Safety
/// `points` must hold `n * d` values; `handle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_kmeans_fit(
    points: *const f64,
    n: usize,
    d: usize,
    k: usize,
    seed: u64,
    handle: *mut *mut LsKMeans,
) -> LsStatus {
    guard(|| {
        if handle.is_null() {
            return Err(Failure(LsStatus::NullPointer, "handle is null".into()));
        }
        let data = input(points, size(n, d, "points")?, "points")?;
        let model = kmeans(&rows(data, n, d), &KMeansConfig::new(k, seed))?;
        handle.write(Box::into_raw(Box::new(LsKMeans { model, dim: d })));
        Ok(())
    })
}

/// Cluster index of each of the `n` fitted points.
///
/// # Safety
/// `handle` must come from [`ls_kmeans_fit`]; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn ls_kmeans_assignments(handle: *const LsKMeans, out: *mut usize, len: usize) -> LsStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| Failure(LsStatus::NullPointer, "handle is null".into()))?;
        let a = &h.model.assignments;
        if len < a.len() {
            return Err(Failure(LsStatus::BufferTooSmall, format!("need {} slots, got {len}", a.len())));
        }
        output(out, a.len(), "out")?.copy_from_slice(a);
        Ok(())
    })
}

/// The `k * d` centroid coordinates, row-major.
///
/// # Safety
/// `handle` must come from [`ls_kmeans_fit`]; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn ls_kmeans_centroids(handle: *const LsKMeans, out: *mut f64, len: usize) -> LsStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| Failure(LsStatus::NullPointer, "handle is null".into()))?;
        let need = h.model.k * h.dim;
        if len < need {
            return Err(Failure(LsStatus::BufferTooSmall, format!("need {need} slots, got {len}")));
        }
        let out = output(out, need, "out")?;
        for (dst, c) in out.chunks_mut(h.dim.max(1)).zip(&h.model.centroids) {
            dst.copy_from_slice(c);
        }
        Ok(())
    })
}

/// Within-cluster sum of squared distances of the fitted model.
///
/// # Safety
/// `handle` must come from [`ls_kmeans_fit`].
#[no_mangle]
pub unsafe extern "C" fn ls_kmeans_inertia(handle: *const LsKMeans, out: *mut f64) -> LsStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| Failure(LsStatus::NullPointer, "handle is null".into()))?;
        out_value(out, h.model.inertia, "out")
    })
}

/// Releases a k-means handle. Null is ignored.
///
/// # Safety
/// `handle` must come from [`ls_kmeans_fit`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ls_kmeans_free(handle: *mut LsKMeans) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Mean silhouette of a labeling of `n` points of dimension `d`.
///
/// # Safety
/// `points` must hold `n * d` values and `labels` `n`.
#[no_mangle]
pub unsafe extern "C" fn ls_silhouette(points: *const f64, n: usize, d: usize, labels: *const usize, out: *mut f64) -> LsStatus {
    guard(|| {
        let data = input(points, size(n, d, "points")?, "points")?;
        let labels = input(labels, n, "labels")?;
        out_value(out, silhouette(&rows(data, n, d), labels)?, "out")
    })
}

/// Parameters of an exact t-SNE run.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LsTsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

/// Default t-SNE parameters.
#[no_mangle]
pub extern "C" fn ls_tsne_default_params() -> LsTsneParams {
    let c = TsneConfig::default();
    LsTsneParams {
        perplexity: c.perplexity,
        iterations: c.iterations,
        learning_rate: c.learning_rate,
        early_exaggeration: c.early_exaggeration,
        exaggeration_iters: c.exaggeration_iters,
        seed: c.seed,
    }
}

/// Embeds `n` points of dimension `d` into the plane.
///
/// # Safety
/// `points` must hold `n * d` values; `params` and `handle` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ls_tsne_run(
    points: *const f64,
    n: usize,
    d: usize,
    params: *const LsTsneParams,
    handle: *mut *mut LsTsne,
) -> LsStatus {
    guard(|| {
        if handle.is_null() {
            return Err(Failure(LsStatus::NullPointer, "handle is null".into()));
        }
        let p = params.as_ref().ok_or_else(|| Failure(LsStatus::NullPointer, "params is null".into()))?;
        let data = input(points, size(n, d, "points")?, "points")?;
        let cfg = TsneConfig {
            perplexity: p.perplexity,
            iterations: p.iterations,
            learning_rate: p.learning_rate,
            early_exaggeration: p.early_exaggeration,
            exaggeration_iters: p.exaggeration_iters,
            seed: p.seed,
            ..Default::default()
        };
        let result = tsne(&rows(data, n, d), &cfg)?;
        handle.write(Box::into_raw(Box::new(LsTsne { result })));
        Ok(())
    })
}

/// The `2 * n` layout coordinates, interleaved.
///
/// # Safety
/// `handle` must come from [`ls_tsne_run`]; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn ls_tsne_layout(handle: *const LsTsne, out: *mut f64, len: usize) -> LsStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| Failure(LsStatus::NullPointer, "handle is null".into()))?;
        let layout = &h.result.layout;
        if len < 2 * layout.len() {
            return Err(Failure(LsStatus::BufferTooSmall, format!("need {} slots, got {len}", 2 * layout.len())));
        }
        let out = output(out, 2 * layout.len(), "out")?;
        for (dst, p) in out.chunks_mut(2).zip(layout) {
            dst.copy_from_slice(p);
        }
        Ok(())
    })
}

/// KL divergence after the last iteration.
///
/// # Safety
/// `handle` must come from [`ls_tsne_run`].
#[no_mangle]
pub unsafe extern "C" fn ls_tsne_final_kl(handle: *const LsTsne, out: *mut f64) -> LsStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| Failure(LsStatus::NullPointer, "handle is null".into()))?;
        out_value(out, h.result.final_kl(), "out")
    })
}

/// Releases a t-SNE handle. Null is ignored.
///
/// # Safety
/// `handle` must come from [`ls_tsne_run`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ls_tsne_free(handle: *mut LsTsne) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// `max(0, d(a, p) - d(a, n) + margin)` with Manhattan distance.
///
/// # Safety
/// `anchor`, `positive` and `negative` must each hold `d` values.
#[no_mangle]
pub unsafe extern "C" fn ls_triplet_loss(
    anchor: *const f64,
    positive: *const f64,
    negative: *const f64,
    d: usize,
    margin: f64,
    out: *mut f64,
) -> LsStatus {
    guard(|| {
        let a = input(anchor, d, "anchor")?;
        let p = input(positive, d, "positive")?;
        let n = input(negative, d, "negative")?;
        out_value(out, triplet_loss(a, p, n, margin)?, "out")
    })
}

/// Leave-one-out MAE and RMSE of standardized ridge regression with penalty
/// `lambda` on `n` rows of `p` features.
///
/// # Safety
/// `x` must hold `n * p` values and `y` `n`.
#[no_mangle]
pub unsafe extern "C" fn ls_ridge_loocv(
    x: *const f64,
    n: usize,
    p: usize,
    y: *const f64,
    lambda: f64,
    mae: *mut f64,
    rmse: *mut f64,
) -> LsStatus {
    guard(|| {
        let data = input(x, size(n, p, "x")?, "x")?;
        let y = input(y, n, "y")?;
        let design: Vec<Vec<f64>> = if p == 0 { vec![Vec::new(); n] } else { rows(data, n, p) };
        let r = loocv_evaluate(&design, y, lambda)?;
        out_value(mae, r.mae, "mae")?;
        out_value(rmse, r.rmse, "rmse")
    })
}
