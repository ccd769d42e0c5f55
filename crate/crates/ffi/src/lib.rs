//! C ABI over `skelgrid`.
//!
//! Objects cross the boundary as opaque handles created by `sg_*_new`-style
//! constructors and released by the matching `sg_*_free`. Every fallible call
//! returns an [`SgStatus`]; on failure the message is kept per thread and read
//! with [`sg_last_error`]. Panics are caught and reported as
//! [`SgStatus::Panic`]; no unwinding crosses the ABI.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use skelgrid::balls::{grow, Ball, Trajectory};
use skelgrid::io::stream_rng;
use skelgrid::maps::{EvaluableMap, HopfFibration, SkeletonRetraction, WhiteheadBoundary};
use skelgrid::quadrature::{energy, Domain, QuadratureConfig};
use skelgrid::topology::{hopf_invariant, joint_degrees, DegreeConfig, HopfConfig, Weight};
use skelgrid::transport::{dyadic_plan, exact_min, local_search, naive_plan, ExactConfig, FaceFlow};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    MapError = 4,
    QuadratureError = 5,
    TopologyError = 6,
    BallError = 7,
    TransportError = 8,
    ExperimentFailed = 9,
    IoError = 10,
    Panic = 11,
}

/// Plans accepted by [`sg_transport_plan`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SgSolver {
    Naive = 0,
    Dyadic = 1,
    /// Dyadic plan followed by 64 sweeps of local search.
    Best = 2,
}

/// An evaluable map.
pub struct SgMap {
    inner: Arc<dyn EvaluableMap>,
}

/// An integer face flow on a cube grid.
pub struct SgFlow {
    inner: FaceFlow,
    certified: bool,
}

/// A growing-ball trajectory.
pub struct SgTrajectory {
    inner: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl std::fmt::Display) {
    let s = CString::new(msg.to_string().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

fn fail(status: SgStatus, msg: impl std::fmt::Display) -> SgStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> SgStatus) -> SgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(SgStatus::Panic, msg)
        }
    }
}

/// `slice::from_raw_parts` that accepts a null pointer for an empty slice.
unsafe fn slice<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if len == 0 {
        Some(&[])
    } else if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize) -> Option<&'a mut [T]> {
    if len == 0 {
        Some(&mut [])
    } else if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts_mut(ptr, len))
    }
}

/// Copies the calling thread's last error message, NUL terminated and
/// truncated to `len`. Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sg_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn new_map(m: Arc<dyn EvaluableMap>, out: *mut *mut SgMap) -> SgStatus {
    if out.is_null() {
        return fail(SgStatus::NullPointer, "null output handle");
    }
    // SAFETY: checked non-null; the caller owns the slot
    unsafe { *out = Box::into_raw(Box::new(SgMap { inner: m })) };
    SgStatus::Ok
}

/// Skeleton retraction of the unit-cube grid in dimension `dim >= 2`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sg_map_skeleton(dim: usize, out: *mut *mut SgMap) -> SgStatus {
    guard(|| match SkeletonRetraction::new(dim) {
        Ok(m) => new_map(Arc::new(m), out),
        Err(e) => fail(SgStatus::InvalidArgument, e),
    })
}

/// Whitehead boundary map on the boundary of `[-1/2, 1/2]^{4n}`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sg_map_whitehead(n: usize, out: *mut *mut SgMap) -> SgStatus {
    guard(|| match WhiteheadBoundary::new(n) {
        Ok(m) => new_map(Arc::new(m), out),
        Err(e) => fail(SgStatus::InvalidArgument, e),
    })
}

/// Hopf fibration `R^4 \ {0} -> S^2`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sg_map_hopf_fibration(out: *mut *mut SgMap) -> SgStatus {
    guard(|| new_map(Arc::new(HopfFibration), out))
}

/// Releases a map; null is ignored.
///
/// # Safety
/// `map` must come from an `sg_map_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sg_map_free(map: *mut SgMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Domain and codomain dimensions.
///
/// # Safety
/// `map` must be a live handle; outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sg_map_dims(map: *const SgMap, domain: *mut usize, codomain: *mut usize) -> SgStatus {
    guard(|| {
        let (Some(m), false, false) = (map.as_ref(), domain.is_null(), codomain.is_null()) else {
            return fail(SgStatus::NullPointer, "null argument");
        };
        *domain = m.inner.domain_dim();
        *codomain = m.inner.codomain_dim();
        SgStatus::Ok
    })
}

/// Evaluates `map` at `x` (length `x_len`) into `out` (capacity `out_len`).
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn sg_map_eval(
    map: *const SgMap,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> SgStatus {
    guard(|| {
        let (Some(m), Some(x), Some(out)) = (map.as_ref(), slice(x, x_len), slice_mut(out, out_len)) else {
            return fail(SgStatus::NullPointer, "null argument");
        };
        if x.len() != m.inner.domain_dim() {
            return fail(SgStatus::InvalidArgument, format!("point has length {}, map needs {}", x.len(), m.inner.domain_dim()));
        }
        if out.len() < m.inner.codomain_dim() {
            return fail(SgStatus::BufferTooSmall, format!("output needs {} entries", m.inner.codomain_dim()));
        }
        match m.inner.eval_into(x, &mut out[..m.inner.codomain_dim()]) {
            Ok(()) => SgStatus::Ok,
            Err(e) => fail(SgStatus::MapError, e),
        }
    })
}

/// `int_{[lo, hi]} |Du|^p` with its error bound, at coarse level `level`.
///
/// # Safety
/// `lo` and `hi` must hold `dim` entries; outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sg_energy_box(
    map: *const SgMap,
    lo: *const f64,
    hi: *const f64,
    dim: usize,
    p: f64,
    level: u32,
    value: *mut f64,
    error_bound: *mut f64,
) -> SgStatus {
    guard(|| {
        let (Some(m), Some(lo), Some(hi)) = (map.as_ref(), slice(lo, dim), slice(hi, dim)) else {
            return fail(SgStatus::NullPointer, "null argument");
        };
        if value.is_null() || error_bound.is_null() {
            return fail(SgStatus::NullPointer, "null output");
        }
        if dim != m.inner.domain_dim() {
            return fail(SgStatus::InvalidArgument, "box dimension differs from the map's");
        }
        let cfg = QuadratureConfig { base_level: level, ..Default::default() };
        let d = Domain::Box { lo: lo.to_vec(), hi: hi.to_vec() };
        match energy(&*m.inner, &d, p, &cfg) {
            Ok(e) => {
                *value = e.value;
                *error_bound = e.error_bound;
                SgStatus::Ok
            }
            Err(e) => fail(SgStatus::QuadratureError, e),
        }
    })
}

/// Degrees of `map` restricted to the boundary of the cube with center
/// `center` (length `dim`) and edge `edge`, about `count` points stored
/// row-major in `sigmas`. Writes `count` degrees and the largest rounding
/// residual.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn sg_degrees_on_cube(
    map: *const SgMap,
    center: *const f64,
    dim: usize,
    edge: f64,
    sigmas: *const f64,
    count: usize,
    degrees: *mut i64,
    residual: *mut f64,
) -> SgStatus {
    guard(|| {
        let (Some(m), Some(c), Some(s), Some(deg)) =
            (map.as_ref(), slice(center, dim), slice(sigmas, dim * count), slice_mut(degrees, count))
        else {
            return fail(SgStatus::NullPointer, "null argument");
        };
        if residual.is_null() {
            return fail(SgStatus::NullPointer, "null output");
        }
        if count == 0 || dim == 0 {
            return fail(SgStatus::InvalidArgument, "need at least one point");
        }
        let pts: Vec<Vec<f64>> = s.chunks(dim).map(<[f64]>::to_vec).collect();
        let slice = Domain::cube_shell(c.to_vec(), edge);
        match joint_degrees(&*m.inner, &slice, &pts, &Weight::Uniform, &DegreeConfig::default()) {
            Ok(r) => {
                for (d, e) in deg.iter_mut().zip(&r.entries) {
                    *d = e.degree;
                }
                *residual = r.residual;
                SgStatus::Ok
            }
            Err(e) => fail(SgStatus::TopologyError, e),
        }
    })
}

/// Hopf invariant of a map on the boundary of `[-1/2, 1/2]^4`, agreed on by
/// `pairs` regular-value pairs drawn from `seed`.
///
/// # Safety
/// `map` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sg_hopf_invariant(
    map: *const SgMap,
    resolution: usize,
    pairs: usize,
    seed: u64,
    out: *mut i64,
) -> SgStatus {
    guard(|| {
        let (Some(m), false) = (map.as_ref(), out.is_null()) else {
            return fail(SgStatus::NullPointer, "null argument");
        };
        let cfg = HopfConfig { resolution, pairs, ..Default::default() };
        let mut rng = stream_rng(seed, 0);
        match hopf_invariant(&*m.inner, &cfg, &mut rng) {
            Ok(r) => {
                *out = r.invariant;
                SgStatus::Ok
            }
            Err(e) => fail(SgStatus::TopologyError, e),
        }
    })
}

fn new_flow(f: FaceFlow, certified: bool, out: *mut *mut SgFlow) -> SgStatus {
    if out.is_null() {
        return fail(SgStatus::NullPointer, "null output handle");
    }
    // SAFETY: checked non-null
    unsafe { *out = Box::into_raw(Box::new(SgFlow { inner: f, certified })) };
    SgStatus::Ok
}

/// Certified minimum-cost flow for uniform supply `supply` on the `l^n`
/// grid with face cost `|d|^alpha`, searching `|d| <= flow_cap`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sg_transport_exact(
    n: usize,
    l: usize,
    supply: i64,
    alpha: f64,
    flow_cap: i64,
    out: *mut *mut SgFlow,
) -> SgStatus {
    guard(|| {
        let inst = match FaceFlow::uniform(n, l, supply, alpha) {
            Ok(i) => i,
            Err(e) => return fail(SgStatus::InvalidArgument, e),
        };
        let cfg = ExactConfig { flow_cap, ..Default::default() };
        match exact_min(&inst.grid, &inst.supplies, alpha, &cfg) {
            Ok(r) => new_flow(r.flow, r.certified, out),
            Err(e) => fail(SgStatus::TransportError, e),
        }
    })
}

/// Heuristic plan for uniform supply on the `l^n` grid.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sg_transport_plan(
    n: usize,
    l: usize,
    supply: i64,
    alpha: f64,
    solver: SgSolver,
    out: *mut *mut SgFlow,
) -> SgStatus {
    guard(|| {
        let inst = match FaceFlow::uniform(n, l, supply, alpha) {
            Ok(i) => i,
            Err(e) => return fail(SgStatus::InvalidArgument, e),
        };
        let plan = match solver {
            SgSolver::Naive => naive_plan(&inst.grid, &inst.supplies, alpha),
            SgSolver::Dyadic => dyadic_plan(&inst.grid, &inst.supplies, alpha),
            SgSolver::Best => dyadic_plan(&inst.grid, &inst.supplies, alpha).map(|d| local_search(&d, 64).0),
        };
        match plan {
            Ok(f) => new_flow(f, false, out),
            Err(e) => fail(SgStatus::TransportError, e),
        }
    })
}

/// Total cost, validity and certification of a flow.
///
/// # Safety
/// `flow` must be a live handle; outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sg_flow_summary(
    flow: *const SgFlow,
    cost: *mut f64,
    valid: *mut bool,
    certified: *mut bool,
) -> SgStatus {
    guard(|| {
        let Some(f) = flow.as_ref() else {
            return fail(SgStatus::NullPointer, "null flow");
        };
        if cost.is_null() || valid.is_null() || certified.is_null() {
            return fail(SgStatus::NullPointer, "null output");
        }
        let v = f.inner.validate();
        *cost = v.cost;
        *valid = v.valid;
        *certified = f.certified;
        SgStatus::Ok
    })
}

/// Copies the per-face `+e_axis` flux (indexed by face id) into `buf`.
/// `needed` receives the face count; a short buffer yields `BufferTooSmall`.
///
/// # Safety
/// `buf` must be valid for `len` entries and `needed` for writes.
#[no_mangle]
pub unsafe extern "C" fn sg_flow_values(flow: *const SgFlow, buf: *mut i64, len: usize, needed: *mut usize) -> SgStatus {
    guard(|| {
        let (Some(f), Some(buf), false) = (flow.as_ref(), slice_mut(buf, len), needed.is_null()) else {
            return fail(SgStatus::NullPointer, "null argument");
        };
        let v = &f.inner.flow;
        *needed = v.len();
        if buf.len() < v.len() {
            return fail(SgStatus::BufferTooSmall, format!("need {} entries", v.len()));
        }
        buf[..v.len()].copy_from_slice(v);
        SgStatus::Ok
    })
}

/// Releases a flow; null is ignored.
///
/// # Safety
/// `flow` must come from an `sg_transport_*` call and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sg_flow_free(flow: *mut SgFlow) {
    if !flow.is_null() {
        drop(Box::from_raw(flow));
    }
}

/// Grows `count` balls in `R^dim` (centers row-major) up to `horizon`.
///
/// # Safety
/// Pointers must be valid for the given lengths; `out` for writes.
#[no_mangle]
pub unsafe extern "C" fn sg_balls_grow(
    centers: *const f64,
    radii: *const f64,
    count: usize,
    dim: usize,
    horizon: f64,
    out: *mut *mut SgTrajectory,
) -> SgStatus {
    guard(|| {
        let (Some(c), Some(r), false) = (slice(centers, count * dim), slice(radii, count), out.is_null()) else {
            return fail(SgStatus::NullPointer, "null argument");
        };
        if dim == 0 {
            return fail(SgStatus::InvalidArgument, "zero dimension");
        }
        let balls: Vec<Ball> = c.chunks(dim).zip(r).map(|(c, &r)| Ball::new(c.to_vec(), r)).collect();
        match grow(&balls, horizon) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(SgTrajectory { inner: t }));
                SgStatus::Ok
            }
            Err(e) => fail(SgStatus::BallError, e),
        }
    })
}

/// Balls at time `t`: writes up to `capacity` centers (row-major) and radii,
/// and the actual count to `count`.
///
/// # Safety
/// `centers` must hold `capacity * dim` entries and `radii` `capacity`.
#[no_mangle]
pub unsafe extern "C" fn sg_trajectory_at(
    traj: *const SgTrajectory,
    t: f64,
    centers: *mut f64,
    radii: *mut f64,
    capacity: usize,
    count: *mut usize,
) -> SgStatus {
    guard(|| {
        let Some(tr) = traj.as_ref() else {
            return fail(SgStatus::NullPointer, "null trajectory");
        };
        if count.is_null() {
            return fail(SgStatus::NullPointer, "null output");
        }
        if !(t >= 0.0 && t <= tr.inner.horizon) {
            return fail(SgStatus::InvalidArgument, format!("time {t} outside [0, {}]", tr.inner.horizon));
        }
        let fam = tr.inner.at(t);
        let dim = tr.inner.initial[0].center.len();
        *count = fam.balls.len();
        let (Some(cs), Some(rs)) = (slice_mut(centers, capacity * dim), slice_mut(radii, capacity)) else {
            return fail(SgStatus::NullPointer, "null buffer");
        };
        if capacity < fam.balls.len() {
            return fail(SgStatus::BufferTooSmall, format!("need {} balls", fam.balls.len()));
        }
        for (i, b) in fam.balls.iter().enumerate() {
            cs[i * dim..(i + 1) * dim].copy_from_slice(&b.center);
            rs[i] = b.radius;
        }
        SgStatus::Ok
    })
}

/// Release a trajectory; null is ignored.
///
/// # Safety
/// `traj` must come from [`sg_balls_grow`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sg_trajectory_free(traj: *mut SgTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Runs the experiment described by the JSON `config` (as accepted by
/// `skelgrid --config`) and writes its outputs to `out_dir` as CSV.
/// `all_pass` receives whether every covered assertion passed.
///
/// # Safety
/// `config` and `out_dir` must be NUL-terminated; `all_pass` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sg_run_experiment(
    config: *const c_char,
    seed: u64,
    out_dir: *const c_char,
    all_pass: *mut bool,
) -> SgStatus {
    guard(|| {
        if config.is_null() || out_dir.is_null() || all_pass.is_null() {
            return fail(SgStatus::NullPointer, "null argument");
        }
        let (Ok(cfg), Ok(dir)) = (CStr::from_ptr(config).to_str(), CStr::from_ptr(out_dir).to_str()) else {
            return fail(SgStatus::InvalidArgument, "arguments must be UTF-8");
        };
        let cmd: skelgrid::experiments::Command = match serde_json::from_str(cfg) {
            Ok(c) => c,
            Err(e) => return fail(SgStatus::InvalidArgument, e),
        };
        let out = match skelgrid::experiments::run(&cmd, seed) {
            Ok(o) => o,
            Err(e) => return fail(SgStatus::ExperimentFailed, e),
        };
        if let Err(e) = out.write(Path::new(dir), skelgrid::io::Format::Csv) {
            return fail(SgStatus::IoError, e);
        }
        *all_pass = out.summary.all_pass();
        SgStatus::Ok
    })
}
