use anyhow::bail;
use crlab_core::oracle::{check_case, micro_suite, OracleResult};

use crate::config::ExperimentConfig;
use crate::output::OutDir;

pub fn run(cfg: &ExperimentConfig, out: &OutDir) -> anyhow::Result<()> {
    let o = &cfg.oracle;
    let mut rows: Vec<OracleResult> = Vec::new();
    for case in micro_suite() {
        for resample in [true, false] {
            let res = check_case(
                &case,
                o.n_inner,
                o.n_seeds,
                o.horizon,
                o.budget,
                resample,
                o.tv_threshold,
                cfg.seed,
            )?;
            println!(
                "oracle {:<6} resample={:<5} mean_tv={:.5} threshold={:.3} {}",
                res.case,
                res.resample,
                res.mean_tv,
                res.threshold,
                if res.pass { "PASS" } else { "FAIL" }
            );
            rows.push(res);
        }
    }
    out.write_csv("oracle_check", &rows)?;
    let failures: Vec<&OracleResult> = rows.iter().filter(|r| !r.pass).collect();
    if !failures.is_empty() {
        bail!(
            "oracle check failed: {} of {} cases above TV threshold",
            failures.len(),
            rows.len()
        );
    }
    Ok(())
}
