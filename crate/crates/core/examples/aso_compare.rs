//! Comparing three models' per-seed scores with the Almost Stochastic Order
//! test. `eps_min <= 0.3` marks the row model as almost stochastically
//! dominant over the column model.

use uqeval::aso::{aso_min_epsilon, dominance_matrix, AsoConfig};

fn main() -> uqeval::Result<()> {
    let cfg = AsoConfig::default();
    let groups = vec![
        ("large".to_string(), vec![0.912, 0.905, 0.921, 0.917, 0.909]),
        ("base".to_string(), vec![0.884, 0.899, 0.890, 0.879, 0.893]),
        (
            "base-v2".to_string(),
            vec![0.887, 0.895, 0.892, 0.881, 0.890],
        ),
    ];
    let m = dominance_matrix(&groups, &cfg)?;
    print!("{}", m.render());

    let r = aso_min_epsilon(&groups[1].1, &groups[2].1, &cfg)?;
    println!(
        "\nbase vs base-v2: eps_hat {:.3}, eps_min {:.3}, dominant {}",
        r.epsilon_hat, r.epsilon_min, r.dominant
    );
    Ok(())
}
