//! `mate scan-audit`: per-axis adjacency of a scan family.

use mate_core::scan::{adjacency_d_k, Axis};

use crate::error::CliError;
use crate::output::{emit, header};
use crate::ScanAuditArgs;

pub fn render(args: &ScanAuditArgs) -> Result<String, CliError> {
    let rep = adjacency_d_k(args.shape.0, args.family, args.k)?;
    let mut text = header("scan-audit");
    text.push_str("shape,family,k,axis,pairs,mean_min_distance,d_k\n");
    for axis in Axis::ALL {
        let a = axis as usize;
        let mean = rep.per_axis_min_mean[a].map_or(String::new(), |m| m.to_string());
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            args.shape,
            args.family.name(),
            args.k,
            axis.name(),
            rep.pair_counts[a],
            mean,
            rep.d_k
        ));
    }
    Ok(text)
}

pub fn run(args: &ScanAuditArgs) -> Result<(), CliError> {
    emit(args.out.as_deref(), &render(args)?)
}
