//! Compares the analytic MLP gradient with central finite differences and
//! takes a few AdamW steps on one batch.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nuens::nn::{grad_check, loss_and_grad, ArchSpec, Batch, Params};
use nuens::optim::{step_in_place, OptConfig, OptState};

fn main() -> nuens::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let arch = ArchSpec::new(5, vec![16, 8], 3)?;
    let mut params = Params::he_uniform(&arch, 1);
    let inputs = Array2::from_shape_fn((32, 5), |_| rng.random_range(-1.0..1.0));
    let labels = (0..32).map(|i| i % 3).collect();
    let batch = Batch::new(inputs, labels)?;

    println!("{} parameters", arch.num_params());
    println!(
        "max relative error over every coordinate: {:.2e}",
        grad_check(&params, &batch, 1e-5, usize::MAX)?
    );

    let cfg = OptConfig {
        learning_rate: 1e-2,
        weight_decay: 0.01,
        ..OptConfig::default()
    };
    let mut state = OptState::new(&params);
    for t in 0..=200 {
        let (loss, grad) = loss_and_grad(&params, &batch)?;
        if t % 50 == 0 {
            println!("step {t:>3}: loss {loss:.5}  ‖w‖² {:.3}", params.squared_l2_norm());
        }
        step_in_place(&mut params, &grad, &mut state, &cfg)?;
    }
    Ok(())
}
