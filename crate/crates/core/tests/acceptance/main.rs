//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! `SGG_ACCEPTANCE=1,3,7` runs a subset.

mod common;

use std::process::ExitCode;
use std::time::Instant;

mod c1_gradients;
mod c2_metric_oracle;
mod c3_blindness;
mod c7_analysis;
mod c9_determinism;
mod trained;

use common::Verdict;

fn main() -> ExitCode {
    let only: Option<Vec<u32>> = std::env::var("SGG_ACCEPTANCE").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |id: u32| only.as_ref().is_none_or(|ids| ids.contains(&id));

    let mut verdicts: Vec<Verdict> = Vec::new();
    let mut timed = |id: u32, f: &dyn Fn() -> Verdict| {
        if wanted(id) {
            let t0 = Instant::now();
            let mut v = f();
            v.secs = t0.elapsed().as_secs_f64();
            println!("{v}");
            verdicts.push(v);
        }
    };
    timed(1, &c1_gradients::run);
    timed(2, &c2_metric_oracle::run);
    timed(3, &c3_blindness::run);
    timed(7, &c7_analysis::run);
    timed(9, &c9_determinism::run);
    if [4, 5, 6, 8].into_iter().any(wanted) {
        let t0 = Instant::now();
        let runs = trained::Runs::collect(&[4, 5, 6, 8].into_iter().filter(|&id| wanted(id)).collect::<Vec<_>>());
        println!("trained {} models in {:.0}s", runs.len(), t0.elapsed().as_secs_f64());
        for id in [4, 5, 6, 8].into_iter().filter(|&id| wanted(id)) {
            let v = runs.verdict(id);
            println!("{v}");
            verdicts.push(v);
        }
    }

    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!("\n{} of {} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
