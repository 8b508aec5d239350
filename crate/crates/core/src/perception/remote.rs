//! Client for an external findings service.
//!
//! Request `{scan_id, volume_ref}`, response `{findings: [{name, score}]}`.
//! Out-of-range scores and unknown names are rejected rather than clamped.

use serde::Serialize;

use super::{FindingSet, FindingSource, FindingsDocument};
use crate::Result;

pub use crate::remote::RemoteConfig;

#[derive(Serialize)]
struct FindingsRequest<'a> {
    scan_id: &'a str,
    volume_ref: &'a str,
}

/// `scan_ref` is sent as both the scan id and the volume reference unless it
/// has the form `scan_id=volume_ref`.
pub fn fetch_findings_remote(scan_ref: &str, config: &RemoteConfig) -> Result<FindingSet> {
    let (scan_id, volume_ref) = scan_ref.split_once('=').unwrap_or((scan_ref, scan_ref));
    let doc: FindingsDocument = crate::remote::post_json(
        config,
        &FindingsRequest { scan_id, volume_ref },
        scan_ref,
    )?;
    doc.into_set(FindingSource::ExternalService)
}
