//! Loss construction for pretext tasks and the translation objective.

use liss_tensor::{Graph, Scalar, ValueId};

use crate::error::{Error, Result};
use crate::nets::{Discriminator, Fwd};

/// Exact mixture weights of the colorization objective.
pub const COLORIZATION_L1_WEIGHT: f64 = 0.1;
pub const COLORIZATION_GAN_WEIGHT: f64 = 0.9;

/// Adversarial formulation.
///
/// `Logistic` is the log form: the sigmoid is applied to the
/// patch-averaged logit and the generator uses the non-saturating
/// `-log D(fake)` objective. `LeastSquares` matches the ancestor
/// implementation's LSGAN, also on the patch average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanMode {
    Logistic,
    LeastSquares,
}

/// Mean cross-entropy between logits `[N, K]` and class labels.
pub fn classification_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: ValueId,
    labels: &[usize],
) -> Result<ValueId> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 {
        return Err(Error::Input(format!(
            "classification_loss: logits must be [N, K], got {shape:?}"
        )));
    }
    if labels.len() != shape[0] {
        return Err(Error::Input(format!(
            "classification_loss: {} labels for batch of {}",
            labels.len(),
            shape[0]
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= shape[1]) {
        return Err(Error::Input(format!(
            "classification_loss: label {bad} out of range 0..{}",
            shape[1]
        )));
    }
    Ok(g.cross_entropy_logits(logits, labels))
}

fn same_shape<T: Scalar>(g: &Graph<T>, a: ValueId, b: ValueId, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Input(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

/// Mean absolute error against a depth pseudo-label `[N, 1, H, W]`.
pub fn depth_loss<T: Scalar>(g: &mut Graph<T>, pred: ValueId, label: ValueId) -> Result<ValueId> {
    same_shape(g, pred, label, "depth_loss")?;
    let shape = g.shape(pred);
    if shape.len() != 4 || shape[1] != 1 {
        return Err(Error::Input(format!(
            "depth_loss: expected [N, 1, H, W], got {shape:?}"
        )));
    }
    Ok(g.l1_loss(pred, label))
}

/// L1 penalty for a same-domain translation acting as the identity.
pub fn identity_loss<T: Scalar>(
    g: &mut Graph<T>,
    translated: ValueId,
    input: ValueId,
) -> Result<ValueId> {
    same_shape(g, translated, input, "identity_loss")?;
    Ok(g.l1_loss(translated, input))
}

/// L1 penalty between an image and its round trip through both
/// translators.
pub fn cycle_loss<T: Scalar>(
    g: &mut Graph<T>,
    input: ValueId,
    round_trip: ValueId,
) -> Result<ValueId> {
    same_shape(g, input, round_trip, "cycle_loss")?;
    Ok(g.l1_loss(input, round_trip))
}

/// Generator-side adversarial term from a patch logit grid.
pub fn gen_loss_from_patch_logits<T: Scalar>(
    g: &mut Graph<T>,
    d_fake: ValueId,
    mode: GanMode,
) -> ValueId {
    let pa = g.mean_per_sample(d_fake);
    match mode {
        GanMode::Logistic => {
            // -log sigmoid(pa) == softplus(-pa)
            let n = g.neg(pa);
            let sp = g.softplus(n);
            g.mean_all(sp)
        }
        GanMode::LeastSquares => {
            let d = g.add_const(pa, -T::one());
            let sq = g.square(d);
            g.mean_all(sq)
        }
    }
}

/// Discriminator-side adversarial term from patch logit grids.
pub fn disc_loss_from_patch_logits<T: Scalar>(
    g: &mut Graph<T>,
    d_real: ValueId,
    d_fake: ValueId,
    mode: GanMode,
) -> ValueId {
    let pa_real = g.mean_per_sample(d_real);
    let pa_fake = g.mean_per_sample(d_fake);
    match mode {
        GanMode::Logistic => {
            // -(log sigmoid(real) + log(1 - sigmoid(fake)))
            let nr = g.neg(pa_real);
            let tr = g.softplus(nr);
            let tr = g.mean_all(tr);
            let tf = g.softplus(pa_fake);
            let tf = g.mean_all(tf);
            g.add(tr, tf)
        }
        GanMode::LeastSquares => {
            let dr = g.add_const(pa_real, -T::one());
            let dr = g.square(dr);
            let dr = g.mean_all(dr);
            let df = g.square(pa_fake);
            let df = g.mean_all(df);
            let sum = g.add(dr, df);
            g.scale(sum, T::from_f64(0.5))
        }
    }
}

/// Generator-side GAN loss: runs the (non-trainable here) discriminator
/// on the attached fake batch so gradients reach the generator only.
pub fn gan_generator_loss<T: Scalar>(
    f: &mut Fwd<T>,
    disc: &Discriminator<T>,
    fake: ValueId,
    mode: GanMode,
) -> Result<ValueId> {
    let d_fake = disc.forward(f, false, fake)?;
    Ok(gen_loss_from_patch_logits(f.graph, d_fake, mode))
}

/// Discriminator-side GAN loss; the fake batch is detached so no gradient
/// propagates back into the generator.
pub fn gan_discriminator_loss<T: Scalar>(
    f: &mut Fwd<T>,
    disc: &Discriminator<T>,
    real: ValueId,
    fake: ValueId,
    mode: GanMode,
) -> Result<ValueId> {
    let fake = f.graph.detach(fake);
    let d_real = disc.forward(f, true, real)?;
    let d_fake = disc.forward(f, true, fake)?;
    Ok(disc_loss_from_patch_logits(f.graph, d_real, d_fake, mode))
}

/// Both adversarial terms in one graph: `(disc_loss, gen_loss)`.
pub fn gan_losses<T: Scalar>(
    f: &mut Fwd<T>,
    disc: &Discriminator<T>,
    real: ValueId,
    fake: ValueId,
    mode: GanMode,
) -> Result<(ValueId, ValueId)> {
    same_shape(f.graph, real, fake, "gan_losses")?;
    let gen = {
        let d_fake = disc.forward(f, true, fake)?;
        gen_loss_from_patch_logits(f.graph, d_fake, mode)
    };
    let disc_loss = gan_discriminator_loss(f, disc, real, fake, mode)?;
    Ok((disc_loss, gen))
}

/// Colorization objective: `0.1 * L1 + 0.9 * GAN` against the domain's
/// colorization discriminator (unconditional: it sees only the colors).
pub fn colorization_loss<T: Scalar>(
    f: &mut Fwd<T>,
    disc: &Discriminator<T>,
    pred: ValueId,
    target: ValueId,
    mode: GanMode,
) -> Result<ValueId> {
    same_shape(f.graph, pred, target, "colorization_loss")?;
    let l1 = f.graph.l1_loss(pred, target);
    let gan = gan_generator_loss(f, disc, pred, mode)?;
    let l1 = f.graph.scale(l1, T::from_f64(COLORIZATION_L1_WEIGHT));
    let gan = f.graph.scale(gan, T::from_f64(COLORIZATION_GAN_WEIGHT));
    Ok(f.graph.add(l1, gan))
}

/// Weighted translation objective `GAN + l_idt * idt + l_cyc * cyc`.
pub fn translation_objective<T: Scalar>(
    g: &mut Graph<T>,
    gan_g_term: ValueId,
    idt: ValueId,
    cyc: ValueId,
    lambda_idt: f64,
    lambda_cyc: f64,
) -> Result<ValueId> {
    if lambda_idt < 0.0 || lambda_cyc < 0.0 {
        return Err(Error::Config(format!(
            "translation weights must be non-negative, got idt={lambda_idt} cyc={lambda_cyc}"
        )));
    }
    let idt = g.scale(idt, T::from_f64(lambda_idt));
    let cyc = g.scale(cyc, T::from_f64(lambda_cyc));
    let s = g.add(gan_g_term, idt);
    Ok(g.add(s, cyc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    fn scalar_of<T: Scalar>(g: &Graph<T>, id: ValueId) -> f64 {
        g.scalar(id).as_f64()
    }

    #[test]
    fn uniform_logits_hit_closed_forms() {
        let mut g: Graph<f64> = Graph::new();
        let l4 = g.constant(ArrayD::zeros(IxDyn(&[3, 4])));
        let loss4 = classification_loss(&mut g, l4, &[0, 1, 2]).unwrap();
        assert!((scalar_of(&g, loss4) - 4.0f64.ln()).abs() < 1e-9);

        let l64 = g.constant(ArrayD::zeros(IxDyn(&[2, 64])));
        let loss64 = classification_loss(&mut g, l64, &[5, 63]).unwrap();
        assert!((scalar_of(&g, loss64) - 64.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn concentrated_logits_drive_loss_to_zero() {
        let mut g: Graph<f64> = Graph::new();
        let mut z = ArrayD::zeros(IxDyn(&[1, 4]));
        z[[0, 2]] = 60.0;
        let z = g.constant(z);
        let loss = classification_loss(&mut g, z, &[2]).unwrap();
        assert!(scalar_of(&g, loss) < 1e-12);
    }

    #[test]
    fn classification_loss_rejects_bad_labels() {
        let mut g: Graph<f64> = Graph::new();
        let z = g.constant(ArrayD::zeros(IxDyn(&[2, 4])));
        assert!(classification_loss(&mut g, z, &[0, 4]).is_err());
        assert!(classification_loss(&mut g, z, &[0]).is_err());
    }

    #[test]
    fn neutral_patch_logits_match_log_closed_forms() {
        let mut g: Graph<f64> = Graph::new();
        let zeros = g.constant(ArrayD::zeros(IxDyn(&[2, 1, 5, 5])));
        let gen = gen_loss_from_patch_logits(&mut g, zeros, GanMode::Logistic);
        assert!((scalar_of(&g, gen) - 2.0f64.ln()).abs() < 1e-9);

        let r = g.constant(ArrayD::zeros(IxDyn(&[2, 1, 5, 5])));
        let fk = g.constant(ArrayD::zeros(IxDyn(&[2, 1, 5, 5])));
        let disc = disc_loss_from_patch_logits(&mut g, r, fk, GanMode::Logistic);
        assert!((scalar_of(&g, disc) - 2.0 * 2.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn confident_discriminator_drives_its_loss_to_zero() {
        let mut g: Graph<f64> = Graph::new();
        let r = g.constant(ArrayD::from_elem(IxDyn(&[1, 1, 3, 3]), 50.0));
        let fk = g.constant(ArrayD::from_elem(IxDyn(&[1, 1, 3, 3]), -50.0));
        let disc = disc_loss_from_patch_logits(&mut g, r, fk, GanMode::Logistic);
        assert!(scalar_of(&g, disc) < 1e-12);
    }

    #[test]
    fn least_squares_terms_at_neutral_output() {
        let mut g: Graph<f64> = Graph::new();
        let zeros = g.constant(ArrayD::zeros(IxDyn(&[2, 1, 4, 4])));
        let gen = gen_loss_from_patch_logits(&mut g, zeros, GanMode::LeastSquares);
        assert!((scalar_of(&g, gen) - 1.0).abs() < 1e-12);
        let r = g.constant(ArrayD::zeros(IxDyn(&[2, 1, 4, 4])));
        let fk = g.constant(ArrayD::zeros(IxDyn(&[2, 1, 4, 4])));
        let d = disc_loss_from_patch_logits(&mut g, r, fk, GanMode::LeastSquares);
        assert!((scalar_of(&g, d) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn translation_objective_weights_apply_exactly() {
        let mut g: Graph<f64> = Graph::new();
        let one = ArrayD::from_elem(IxDyn(&[1]), 1.0);
        let gan = g.constant(one.clone());
        let idt = g.constant(one.clone());
        let cyc = g.constant(one);
        let total = translation_objective(&mut g, gan, idt, cyc, 5.0, 10.0).unwrap();
        assert!((scalar_of(&g, total) - 16.0).abs() < 1e-12);

        let zero = ArrayD::zeros(IxDyn(&[1]));
        let gan = g.constant(zero.clone());
        let idt = g.constant(zero.clone());
        let cyc = g.constant(zero);
        let total = translation_objective(&mut g, gan, idt, cyc, 5.0, 10.0).unwrap();
        assert_eq!(scalar_of(&g, total), 0.0);
    }

    #[test]
    fn translation_objective_rejects_negative_weights() {
        let mut g: Graph<f64> = Graph::new();
        let one = ArrayD::from_elem(IxDyn(&[1]), 1.0);
        let gan = g.constant(one.clone());
        let idt = g.constant(one.clone());
        let cyc = g.constant(one);
        assert!(translation_objective(&mut g, gan, idt, cyc, -1.0, 10.0).is_err());
    }

    #[test]
    fn cycle_lambda_scales_contribution_linearly() {
        let mut g: Graph<f64> = Graph::new();
        let gan = g.constant(ArrayD::zeros(IxDyn(&[1])));
        let idt = g.constant(ArrayD::zeros(IxDyn(&[1])));
        let cyc = g.constant(ArrayD::from_elem(IxDyn(&[1]), 0.37));
        let t1 = translation_objective(&mut g, gan, idt, cyc, 0.0, 10.0).unwrap();
        let v1 = scalar_of(&g, t1);

        let gan = g.constant(ArrayD::zeros(IxDyn(&[1])));
        let idt = g.constant(ArrayD::zeros(IxDyn(&[1])));
        let cyc = g.constant(ArrayD::from_elem(IxDyn(&[1]), 0.37));
        let t2 = translation_objective(&mut g, gan, idt, cyc, 0.0, 30.0).unwrap();
        let v2 = scalar_of(&g, t2);
        assert!((v2 - 3.0 * v1).abs() < 1e-12);
    }

    #[test]
    fn l1_style_losses_match_scalar_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let a = ArrayD::from_shape_fn(IxDyn(&[2, 3, 4, 4]), |_| rng.random::<f64>());
        let b = ArrayD::from_shape_fn(IxDyn(&[2, 3, 4, 4]), |_| rng.random::<f64>());
        let expect: f64 = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / a.len() as f64;

        let mut g: Graph<f64> = Graph::new();
        let av = g.constant(a.clone());
        let bv = g.constant(b.clone());
        let idt = identity_loss(&mut g, av, bv).unwrap();
        assert!((scalar_of(&g, idt) - expect).abs() < 1e-12);
        let cyc = cycle_loss(&mut g, av, bv).unwrap();
        assert!((scalar_of(&g, cyc) - expect).abs() < 1e-12);

        // Constant-offset identity: |c| exactly.
        let x = g.constant(ArrayD::zeros(IxDyn(&[1, 3, 4, 4])));
        let y = g.constant(ArrayD::from_elem(IxDyn(&[1, 3, 4, 4]), -0.25));
        let l = identity_loss(&mut g, x, y).unwrap();
        assert!((scalar_of(&g, l) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn depth_loss_examples() {
        let mut g: Graph<f64> = Graph::new();
        let p = g.constant(ArrayD::from_elem(IxDyn(&[2, 1, 4, 4]), 0.4));
        let l = g.constant(ArrayD::from_elem(IxDyn(&[2, 1, 4, 4]), 0.4));
        let loss = depth_loss(&mut g, p, l).unwrap();
        assert_eq!(scalar_of(&g, loss), 0.0);

        let p = g.constant(ArrayD::from_elem(IxDyn(&[2, 1, 4, 4]), 0.5));
        let l = g.constant(ArrayD::from_elem(IxDyn(&[2, 1, 4, 4]), 0.4));
        let loss = depth_loss(&mut g, p, l).unwrap();
        assert!((scalar_of(&g, loss) - 0.1).abs() < 1e-9);

        let p = g.constant(ArrayD::zeros(IxDyn(&[2, 3, 4, 4])));
        let l = g.constant(ArrayD::zeros(IxDyn(&[2, 3, 4, 4])));
        assert!(depth_loss(&mut g, p, l).is_err());
    }
}
