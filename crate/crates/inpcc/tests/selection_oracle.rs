//! select_and_compose against a straight-line f64 re-implementation.

mod common;

use common::selection::straight_line_select;
use inpcc::prompts::PromptBank;
use inpcc::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn selection_matches_straight_line_oracle_on_seeded_banks() {
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = rng.gen_range(1..=4);
        let d = rng.gen_range(2..=8);
        let m = rng.gen_range(2..=12);
        let k = rng.gen_range(1..=m);
        let bank = PromptBank::init(l, d, m, k, &mut rng).unwrap();
        let fingerprint_vals: Vec<f64> =
            (0..d).map(|_| rng.gen_range(-1.0..1.0) + 0.1).collect();
        let fingerprint = Tensor::new(&[d], fingerprint_vals.clone()).unwrap();

        let got = bank.select_and_compose(&fingerprint).unwrap();
        let (want_idx, want_w, want_composed) = straight_line_select(
            l,
            d,
            m,
            k,
            &bank.common.to_vec(),
            &bank.u_vectors.to_vec(),
            &bank.v_vectors.to_vec(),
            &bank.key_w1.to_vec(),
            &bank.key_b1.to_vec(),
            &bank.key_w2.to_vec(),
            &bank.key_b2.to_vec(),
            &fingerprint_vals,
        );

        assert_eq!(got.chosen_indices, want_idx, "indices differ at seed {seed}");
        for (a, b) in got.weights.iter().zip(&want_w) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in got.composed.to_vec().iter().zip(&want_composed) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst <= 1e-12, "max abs deviation {worst:.3e} exceeds 1e-12");
}
