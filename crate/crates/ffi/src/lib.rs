//! C ABI for the decoding engine: opaque handles, integer error codes, and
//! a single-step decode entry point over a raw logits buffer.
//!
//! The generated header lands in `include/semsam.h` at build time.

use std::ffi::CStr;
use std::ptr;

use libc::c_char;

use semsam::decode::{decode_step, DecodeRequest, FilterSpec, KeepSpec, SelectMode};
use semsam::neighbors::load_table;
use semsam::{NeighborTable, VocabPartition};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemsamStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    LoadFailed = 3,
    BadRequest = 4,
    DecodeFailed = 5,
}

/// Opaque neighbor-table handle.
pub struct SemsamTable {
    inner: NeighborTable,
}

/// Opaque vocabulary-partition handle.
pub struct SemsamPartition {
    inner: VocabPartition,
}

/// Truncation filter selector for `semsam_decode_step`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemsamFilter {
    /// Keep the smallest set with cumulative probability >= `filter_value`.
    TopP = 0,
    /// Keep the `filter_value` highest-probability tokens.
    TopM = 1,
}

/// Neighbor-slot keep rule selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemsamKeep {
    /// Keep the first `keep_value` slots.
    KPrime = 0,
    /// Keep the prefix with similarity >= `keep_value` (self always kept).
    Threshold = 1,
}

/// Token selection rule.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemsamSelect {
    Argmax = 0,
    /// Requires `has_seed` and `seed`.
    Sample = 1,
}

/// Result of one decode step.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SemsamStepResult {
    pub token: u32,
    /// 1 when the step deferred to the base distribution.
    pub deferred: u8,
    /// Neighbor-table lookups performed (complexity accounting).
    pub lookups: u64,
}

unsafe fn path_from(ptr_: *const c_char) -> Result<String, SemsamStatus> {
    if ptr_.is_null() {
        return Err(SemsamStatus::NullArgument);
    }
    CStr::from_ptr(ptr_)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| SemsamStatus::InvalidUtf8)
}

/// Load a neighbor table from a SEMN file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semsam_table_load(
    path: *const c_char,
    out: *mut *mut SemsamTable,
) -> SemsamStatus {
    if out.is_null() {
        return SemsamStatus::NullArgument;
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match load_table(path) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(SemsamTable { inner }));
            SemsamStatus::Ok
        }
        Err(_) => {
            *out = ptr::null_mut();
            SemsamStatus::LoadFailed
        }
    }
}

/// # Safety
/// `handle` must come from `semsam_table_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn semsam_table_free(handle: *mut SemsamTable) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of content-token rows in the table, 0 on null.
///
/// # Safety
/// `handle` must be a live table handle or null.
#[no_mangle]
pub unsafe extern "C" fn semsam_table_rows(handle: *const SemsamTable) -> u64 {
    handle.as_ref().map_or(0, |t| t.inner.n() as u64)
}

/// Load a vocabulary partition from its JSON file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semsam_partition_load(
    path: *const c_char,
    out: *mut *mut SemsamPartition,
) -> SemsamStatus {
    if out.is_null() {
        return SemsamStatus::NullArgument;
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let parsed = std::fs::read_to_string(path)
        .ok()
        .and_then(|text| VocabPartition::from_json(&text).ok());
    match parsed {
        Some(inner) => {
            *out = Box::into_raw(Box::new(SemsamPartition { inner }));
            SemsamStatus::Ok
        }
        None => {
            *out = ptr::null_mut();
            SemsamStatus::LoadFailed
        }
    }
}

/// # Safety
/// `handle` must come from `semsam_partition_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn semsam_partition_free(handle: *mut SemsamPartition) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Run one semantically rescored decode step over a raw logits buffer.
/// `logits_len` must equal the embedding vocabulary size of the partition.
///
/// # Safety
/// All pointers must be valid; `logits` must reference `logits_len` f32s.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn semsam_decode_step(
    table: *const SemsamTable,
    partition: *const SemsamPartition,
    logits: *const f32,
    logits_len: usize,
    temperature: f32,
    filter: SemsamFilter,
    filter_value: f64,
    keep: SemsamKeep,
    keep_value: f64,
    select: SemsamSelect,
    has_seed: u8,
    seed: u64,
    tau_score: f32,
    out: *mut SemsamStepResult,
) -> SemsamStatus {
    let (Some(table), Some(partition), Some(out)) =
        (table.as_ref(), partition.as_ref(), out.as_mut())
    else {
        return SemsamStatus::NullArgument;
    };
    if logits.is_null() {
        return SemsamStatus::NullArgument;
    }
    let logits = std::slice::from_raw_parts(logits, logits_len);
    let filter = match filter {
        SemsamFilter::TopP => FilterSpec::TopP { p: filter_value },
        SemsamFilter::TopM => FilterSpec::TopM {
            m: filter_value as usize,
        },
    };
    let keep = match keep {
        SemsamKeep::KPrime => KeepSpec::KPrime {
            k_prime: keep_value as usize,
        },
        SemsamKeep::Threshold => KeepSpec::Threshold {
            t: keep_value as f32,
        },
    };
    let select = match select {
        SemsamSelect::Argmax => SelectMode::Argmax,
        SemsamSelect::Sample => SelectMode::Sample,
    };
    if select == SelectMode::Sample && has_seed == 0 {
        return SemsamStatus::BadRequest;
    }
    let req = DecodeRequest {
        logits: logits.to_vec(),
        temperature,
        filter,
        keep,
        select,
        seed: (has_seed != 0).then_some(seed),
        tau_score,
    };
    match decode_step(&req, &table.inner, &partition.inner) {
        Ok(outcome) => {
            *out = SemsamStepResult {
                token: outcome.token,
                deferred: outcome.deferred as u8,
                lookups: outcome.lookups,
            };
            SemsamStatus::Ok
        }
        Err(_) => SemsamStatus::DecodeFailed,
    }
}

/// Static description for a status code.
#[no_mangle]
pub extern "C" fn semsam_status_message(status: SemsamStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        SemsamStatus::Ok => b"ok\0",
        SemsamStatus::NullArgument => b"null argument\0",
        SemsamStatus::InvalidUtf8 => b"invalid utf-8 in string argument\0",
        SemsamStatus::LoadFailed => b"failed to load or parse input file\0",
        SemsamStatus::BadRequest => b"invalid request parameters\0",
        SemsamStatus::DecodeFailed => b"decode step failed\0",
    };
    s.as_ptr() as *const c_char
}
