//! Parameter-touch instrumentation.
//!
//! Runs a forward closure under a recording tape and reports exactly which
//! named parameters were read, without running backward. Backs the
//! plug-and-play switcher audit: inference with modality k must be a pure
//! function of the shared parameters, table row k, head k, and the inputs.

use std::collections::HashSet;

use crate::error::Result;
use crate::model::net::Model;
use crate::numerics;

/// Execute `f` (one or more model forwards) and return the set of parameter
/// names it touched. The tape is discarded afterwards; no gradients flow.
pub fn audit_touched_params<R>(
    model: &Model,
    f: impl FnOnce() -> Result<R>,
) -> Result<(R, HashSet<String>)> {
    numerics::start_recording()?;
    let out = match f() {
        Ok(v) => v,
        Err(e) => {
            numerics::abort_recording();
            return Err(e);
        }
    };
    let uids = numerics::touched_leaf_uids();
    numerics::abort_recording();
    let names = model.uid_names();
    let touched = uids
        .into_iter()
        .filter_map(|u| names.get(&u).cloned())
        .collect();
    Ok((out, touched))
}
