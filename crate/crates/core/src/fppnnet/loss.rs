use super::config::LossConfig;
use crate::dataio::{DenseDepth, SparseDepth};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Masked mean squared error over the pixels with ground truth.
#[derive(Clone, Copy, Debug)]
pub struct MaskedLoss {
    pub value: Var,
    /// Pixels that contributed; zero means the loss is the constant 0.
    pub valid: usize,
}

/// `Σ m·(pred − gt)² / Σ m` with `m` the ground-truth validity mask.
pub fn masked_l2_var<T: Scalar>(tape: &mut Tape<T>, pred: Var, gt: &SparseDepth) -> Result<MaskedLoss> {
    let (w, h) = (gt.width(), gt.height());
    let shape = tape.shape(pred).to_vec();
    if shape != [1, 1, h, w] {
        return Err(Error::shape(format!(
            "prediction {shape:?} vs ground truth {w}x{h}"
        )));
    }
    let valid = gt.valid_count();
    let inv = if valid == 0 { 0.0 } else { 1.0 / valid as f64 };
    let g = gt.grid().data();
    let target = Tensor::from_vec(&shape, g.iter().map(|&v| T::from_f64(v)).collect())?;
    let weights = Tensor::from_vec(
        &shape,
        g.iter().map(|&v| T::from_f64(if v > 0.0 { inv } else { 0.0 })).collect(),
    )?;
    let target = tape.constant(target);
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff);
    let weighted = tape.mul_const(sq, &weights)?;
    Ok(MaskedLoss {
        value: tape.sum(weighted),
        valid,
    })
}

/// Plain evaluation of the same loss. Returns `(loss, valid_pixels)`.
pub fn masked_l2(pred: &DenseDepth, gt: &SparseDepth) -> Result<(f64, usize)> {
    pred.grid().check_same_size(gt.grid(), "prediction vs ground truth")?;
    let valid = gt.valid_count();
    if valid == 0 {
        return Ok((0.0, 0));
    }
    let inv = 1.0 / valid as f64;
    let s: f64 = pred
        .grid()
        .data()
        .iter()
        .zip(gt.grid().data())
        .filter(|(_, &g)| g > 0.0)
        .map(|(&p, &g)| (p - g) * (p - g) * inv)
        .sum();
    Ok((s, valid))
}

#[derive(Clone, Copy, Debug)]
pub struct TotalLoss {
    pub total: Var,
    pub coarse: Var,
    pub refined: Var,
    pub valid: usize,
}

/// `λ1·L(coarse) + λ2·L(refined)`; without a refined map the coarse map
/// stands in for it.
pub fn total_loss_var<T: Scalar>(
    tape: &mut Tape<T>,
    coarse: Var,
    refined: Option<Var>,
    gt: &SparseDepth,
    cfg: &LossConfig,
) -> Result<TotalLoss> {
    let lc = masked_l2_var(tape, coarse, gt)?;
    let lr = match refined {
        Some(r) => masked_l2_var(tape, r, gt)?,
        None => lc,
    };
    let a = tape.scale(lc.value, T::from_f64(cfg.lambda1));
    let b = tape.scale(lr.value, T::from_f64(cfg.lambda2));
    Ok(TotalLoss {
        total: tape.add(a, b)?,
        coarse: lc.value,
        refined: lr.value,
        valid: lc.valid,
    })
}

pub fn total_loss(coarse: f64, refined: f64, cfg: &LossConfig) -> f64 {
    cfg.lambda1 * coarse + cfg.lambda2 * refined
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Grid;
    use proptest::prelude::*;

    fn var(tape: &mut Tape<f64>, g: &Grid<f64>) -> Var {
        tape.leaf(Tensor::from_vec(&[1, 1, g.height(), g.width()], g.data().to_vec()).unwrap())
    }

    #[test]
    fn weighted_sum_of_terms() {
        let gt = SparseDepth::new(Grid::from_vec(3, 1, vec![5.0, 0.0, 8.0]).unwrap()).unwrap();
        let coarse = Grid::from_vec(3, 1, vec![7.0, 100.0, 4.0]).unwrap();
        let refined = Grid::from_vec(3, 1, vec![5.0, -3.0, 10.0]).unwrap();
        let mut tape = Tape::new();
        let c = var(&mut tape, &coarse);
        let r = var(&mut tape, &refined);
        let t = total_loss_var(&mut tape, c, Some(r), &gt, &LossConfig::default()).unwrap();
        assert_eq!(tape.value(t.coarse).data()[0], 10.0);
        assert_eq!(tape.value(t.refined).data()[0], 2.0);
        assert_eq!(tape.value(t.total).data()[0], 2.8);
        assert_eq!(total_loss(10.0, 2.0, &LossConfig::default()), 2.8);
    }

    #[test]
    fn empty_ground_truth_gives_zero() {
        let gt = SparseDepth::empty(2, 2);
        let mut tape = Tape::new();
        let p = var(&mut tape, &Grid::filled(2, 2, 3.0));
        let l = masked_l2_var(&mut tape, p, &gt).unwrap();
        assert_eq!(l.valid, 0);
        assert_eq!(tape.value(l.value).data()[0], 0.0);
        let g = tape.backward(l.value).unwrap();
        assert!(g.get(p).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn without_refinement_coarse_counts_twice() {
        let gt = SparseDepth::new(Grid::from_vec(2, 1, vec![1.0, 2.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let c = var(&mut tape, &Grid::from_vec(2, 1, vec![2.0, 2.0]).unwrap());
        let cfg = LossConfig { lambda1: 0.25, lambda2: 0.5 };
        let t = total_loss_var(&mut tape, c, None, &gt, &cfg).unwrap();
        assert_eq!(tape.value(t.total).data()[0], 0.75 * 0.5);
    }

    proptest! {
        #[test]
        fn invalid_pixels_do_not_matter(
            vals in prop::collection::vec((0.0f64..50.0, any::<bool>()), 12),
            pred in prop::collection::vec(0.0f64..50.0, 12),
            noise in prop::collection::vec(-1e3f64..1e3, 12),
        ) {
            let gt = SparseDepth::new(Grid::from_vec(4, 3, vals.iter().map(|&(v, keep)| if keep { v } else { 0.0 }).collect()).unwrap()).unwrap();
            let a = DenseDepth::new(Grid::from_vec(4, 3, pred.iter().map(|p| p + 0.01).collect()).unwrap()).unwrap();
            let b = DenseDepth::new(Grid::from_fn(4, 3, |x, y| {
                if gt.get(x, y) > 0.0 { a.get(x, y) } else { noise[y * 4 + x].abs() + 0.01 }
            })).unwrap();
            prop_assert_eq!(masked_l2(&a, &gt).unwrap(), masked_l2(&b, &gt).unwrap());
            let mut tape = Tape::new();
            let pa = var(&mut tape, a.grid());
            let pb = var(&mut tape, b.grid());
            let la = masked_l2_var(&mut tape, pa, &gt).unwrap().value;
            let lb = masked_l2_var(&mut tape, pb, &gt).unwrap().value;
            prop_assert_eq!(tape.value(la).data()[0], tape.value(lb).data()[0]);
        }
    }
}
