//! Clustering sensors from a raw panel.

use std::ops::Range;

use stdn_core::cluster::{attach_ramps, fhc, FhcParams, FhcResult, MembershipMatrix};
use stdn_core::decompose::{decompose_panel, Component};
use stdn_core::dtw::{panel_distance_table, DistanceTable, RollingParams};
use stdn_core::panel::{impute_forward, Panel};

use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub distances: DistanceTable,
    pub fhc: FhcResult,
    /// Memberships with ramps attached to their nearest mainline cluster.
    pub memberships: MembershipMatrix,
}

/// Decomposes the steps in `span` with the daily period, measures residual DTW
/// distances between neighbors and runs fuzzy hierarchical clustering.
pub fn cluster_sensors(raw: &Panel, span: Range<usize>, rolling: &RollingParams, params: FhcParams) -> Result<Clustering> {
    let p = impute_forward(&raw.slice_time(span)?)?;
    let d = decompose_panel(&p, p.steps_per_day())?;
    let distances = panel_distance_table(&p, d.block(Component::Residual), rolling)?;
    let result = fhc(&distances, p.sensors(), params)?;
    let memberships = attach_ramps(&result.memberships, p.sensors())?;
    Ok(Clustering { distances, fhc: result, memberships })
}
