use std::collections::{HashMap, HashSet};

use super::{BooleanDataset, DatasetMeta, View};
use crate::error::{Error, Result};

/// Builds the ProcessAll view as the disjoint union of the four views.
///
/// Processes are the union of the input ids, in order of first appearance
/// (PE, PX, PP, PN); a process absent from a view gets zeros in that view's
/// columns. Attribute names that occur in more than one view are prefixed
/// with the view code (`PE:name`) so no column is dropped.
pub fn merge_views(
    pe: &BooleanDataset,
    px: &BooleanDataset,
    pp: &BooleanDataset,
    pn: &BooleanDataset,
) -> Result<BooleanDataset> {
    let views = [
        (View::Event, pe),
        (View::Exec, px),
        (View::Parent, pp),
        (View::Netflow, pn),
    ];
    let (os, scenario) = (pe.os(), pe.scenario());
    for (view, d) in &views[1..] {
        if d.os() != os || d.scenario() != scenario {
            return Err(Error::Domain(format!(
                "cannot merge {view} ({}/{}) with PE ({os}/{scenario})",
                d.os(),
                d.scenario()
            )));
        }
    }

    let mut name_count: HashMap<&str, usize> = HashMap::new();
    for (_, d) in &views {
        for a in d.attributes() {
            *name_count.entry(a.as_str()).or_default() += 1;
        }
    }
    let mut attributes = Vec::new();
    let mut offsets = Vec::with_capacity(views.len());
    for (view, d) in &views {
        offsets.push(attributes.len() as u32);
        for a in d.attributes() {
            if name_count[a.as_str()] > 1 {
                attributes.push(format!("{}:{a}", view.code()));
            } else {
                attributes.push(a.clone());
            }
        }
    }

    let mut ids: Vec<String> = Vec::new();
    let mut position: HashMap<&str, usize> = HashMap::new();
    for (_, d) in &views {
        for id in d.ids() {
            if !position.contains_key(id.as_str()) {
                position.insert(id.as_str(), ids.len());
                ids.push(id.clone());
            }
        }
    }
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); ids.len()];
    for ((_, d), &offset) in views.iter().zip(&offsets) {
        for (i, id) in d.ids().iter().enumerate() {
            let row = &mut rows[position[id.as_str()]];
            row.extend(d.row(i).iter().map(|&j| j + offset));
        }
    }
    debug_assert_eq!(attributes.iter().collect::<HashSet<_>>().len(), attributes.len());

    BooleanDataset::new(
        ids,
        attributes,
        rows,
        DatasetMeta::new(View::All, os, scenario),
    )
}
