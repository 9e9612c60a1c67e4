use serde::{Deserialize, Serialize};

use crate::model::{ForwardOutput, TapedForward};
use crate::numerics::{NumericsError, Tape, Tensor, Var};

use super::TrainConfig;

/// Loss components of one window (or means over several).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    /// `sum (x - x_hat)^2` in raw units.
    pub recon: f64,
    /// Similarity summed over the selected layers, heads and points.
    pub sim: f64,
    /// `recon - lambda * sim` with disabled terms dropped.
    pub total: f64,
}

impl LossComponents {
    pub fn combine(recon: f64, sim: f64, cfg: &TrainConfig) -> Self {
        let mut total = 0.0;
        if cfg.use_recon_loss {
            total += recon;
        }
        if cfg.use_sim_loss {
            total -= cfg.lambda * sim;
        }
        Self { recon, sim, total }
    }
}

/// Records the objective on `tape`. Returns the scalar to differentiate and
/// the measured components. Both components are always measured; only the
/// enabled ones enter the returned scalar.
pub fn loss_on_tape(
    tape: &mut Tape,
    raw: &Tensor,
    fwd: &TapedForward,
    layers: &[usize],
    cfg: &TrainConfig,
) -> Result<(Var, LossComponents), NumericsError> {
    let target = tape.constant(raw.clone());
    let diff = tape.sub(target, fwd.reconstruction)?;
    let sq = tape.square(diff);
    let recon = tape.sum(sq);

    let mut sim: Option<Var> = None;
    for &l in layers {
        let s = tape.sum(fwd.layer_similarity[l]);
        sim = Some(match sim {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    let sim = sim.ok_or(NumericsError::Empty("similarity layers"))?;

    let components = LossComponents::combine(tape.value(recon).item(), tape.value(sim).item(), cfg);
    let total = match (cfg.use_recon_loss, cfg.use_sim_loss) {
        (true, true) => {
            let weighted = tape.scale(sim, cfg.lambda);
            tape.sub(recon, weighted)?
        }
        (true, false) => recon,
        (false, _) => tape.scale(sim, -cfg.lambda),
    };
    Ok((total, components))
}

/// Value-level objective for an already computed forward pass.
pub fn compute_loss(raw: &Tensor, out: &ForwardOutput, layers: &[usize], cfg: &TrainConfig) -> LossComponents {
    let recon = raw
        .data()
        .iter()
        .zip(out.reconstruction.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let sim = out.total_similarity(layers).iter().sum();
    LossComponents::combine(recon, sim, cfg)
}
