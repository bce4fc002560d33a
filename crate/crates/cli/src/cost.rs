//! `mate cost`: exact per-block FLOPs against a global-attention block.

use mate_core::cost::{
    check_config, cost_report_shape, crossover, default_presets, scaling_audit, CostOptions,
    CostReport,
};
use mate_core::mate::MateConfig;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{emit, exact, header};
use crate::CostArgs;

pub const COLUMNS: &str = "N,c_bimamba,c_conv,c_ssm,c_review,c_tesa,mate_total,dit_baseline,speedup,c_bimamba_unidirectional";

fn row(r: &CostReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{:.6},{}\n",
        r.n_tokens,
        exact(&r.c_bimamba),
        exact(&r.c_conv),
        exact(&r.c_ssm),
        exact(&r.c_review),
        exact(&r.c_tesa),
        exact(&r.mate_total()),
        exact(&r.c_dense_baseline),
        r.speedup(),
        exact(&r.c_bimamba_unidirectional),
    )
}

pub fn render(args: &CostArgs) -> Result<String, CliError> {
    let (cfg, mut opts) = match &args.config {
        Some(path) => {
            let run = RunConfig::load(path)?;
            let opts = CostOptions {
                double_bidirectional: run.cost.double_bidirectional,
            };
            (run.mate_config()?, opts)
        }
        None => (MateConfig::default(), CostOptions::default()),
    };
    if args.single_direction {
        opts.double_bidirectional = false;
    }
    check_config(&cfg)?;

    let mut text = header("cost");
    text.push_str(COLUMNS);
    text.push('\n');
    match &args.n_list {
        Some(list) => {
            if list.contains(&0) {
                return Err(CliError::Usage("--n-list entries must be >= 1".into()));
            }
            for r in scaling_audit(&cfg, list, opts)? {
                text.push_str(&row(&r));
            }
        }
        None => {
            let presets = default_presets();
            let shapes = presets
                .iter()
                .map(|p| p.latent_shape())
                .collect::<Result<Vec<_>, _>>()?;
            let reports: Vec<CostReport> = shapes
                .par_iter()
                .map(|&s| cost_report_shape(s, &cfg, opts))
                .collect();
            for r in &reports {
                text.push_str(&row(r));
            }
            for ((p, s), r) in presets.iter().zip(&shapes).zip(&reports) {
                text.push_str(&format!(
                    "# preset {} {}x{}@{}fps latent {} speedup {:.2} reported {}\n",
                    p.label,
                    p.height_px,
                    p.width_px,
                    p.fps,
                    s,
                    r.speedup(),
                    p.reported_speedup
                ));
            }
        }
    }
    text.push_str(&format!("# crossover N {}\n", crossover(&cfg, opts)));
    Ok(text)
}

pub fn run(args: &CostArgs) -> Result<(), CliError> {
    emit(args.out.as_deref(), &render(args)?)
}
