mod common;

use common::*;
use turnrank::model::Model;

#[test]
fn analytic_gradients_match_finite_differences() {
    let config = grad_check_config();
    let mut model = Model::new(config.clone()).unwrap();
    // Move away from the near-uniform-attention init so every tensor has a
    // gradient well above finite-difference noise.
    for (name, t) in model.params.tensors_mut() {
        if !name.ends_with("norm_gain") {
            t.mapv_inplace(|v| v * 10.0);
        }
    }
    let mut rng = seeded(5);
    let input = random_input(&mut rng, config.vocab_size, config.max_seq_len, 18);
    let loss = ProbeLoss {
        match_label: 1.0,
        nsp_label: 0,
        mlm_targets: vec![(3, 9), (7, 20), (12, 31)],
    };
    let report = finite_difference_check(&model, &input, &loss, 1e-4);
    for t in &report {
        println!("{:<28} max rel err {:.3e} (max |g| {:.3e})", t.name, t.max_rel_error, t.max_abs_grad);
    }
    for t in &report {
        assert!(t.max_rel_error < 1e-4, "{} rel err {}", t.name, t.max_rel_error);
    }
}
