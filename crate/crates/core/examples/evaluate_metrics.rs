//! Ranking metrics and the no-answer threshold sweep on hand-made pools.

use turnrank::eval::{default_threshold_grid, evaluate, select_threshold, threshold_sweep, EvalMode, RankedPool};

fn main() -> turnrank::Result<()> {
    let pools = vec![
        RankedPool::from_scores(vec![0.91, 0.40, 0.32, 0.10], vec![1, 0, 0, 0])?,
        RankedPool::from_scores(vec![0.55, 0.82, 0.30, 0.20], vec![1, 0, 0, 0])?,
        RankedPool::from_scores(vec![0.64, 0.12, 0.70, 0.05], vec![0, 1, 1, 0])?,
        RankedPool::from_scores(vec![0.62, 0.33, 0.21, 0.11], vec![0, 0, 0, 0])?,
    ];
    let report = evaluate(&pools, &[(4, 1), (4, 2), (2, 1)], EvalMode::Lenient)?;
    print!("{report}");
    print!("{}", report.to_key_values());

    let grid = default_threshold_grid();
    for (tau, value) in threshold_sweep(&pools, &grid)? {
        println!("tau {tau:.2}: R@1 with abstention {value:.4}");
    }
    println!("chosen tau {:.2}", select_threshold(&pools, &grid)?);
    Ok(())
}
