use crate::numcore::{Tape, Tensor, Var};

use super::RbtError;

/// A bag inside a window: local half-open step range and its reward `R(B)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BagTarget {
    pub start: usize,
    pub end: usize,
    pub reward: f64,
}

/// `sum_B (sum_{t in B} r_t - R(B))^2 / normalizer` over the given bags.
pub(crate) fn reward_loss_sum(tape: &mut Tape, rewards: Var, bags: &[BagTarget], normalizer: f64) -> Result<Var, RbtError> {
    if bags.is_empty() {
        return Err(RbtError::EmptyBags);
    }
    let ranges: Vec<(usize, usize)> = bags.iter().map(|b| (b.start, b.end)).collect();
    let sums = tape.segment_sums(rewards, &ranges)?;
    let target = tape.constant(Tensor::vector(bags.iter().map(|b| b.reward).collect())?);
    let diff = tape.sub(sums, target)?;
    let sq = tape.square(diff)?;
    let total = tape.sum_all(sq)?;
    Ok(tape.scale(total, 1.0 / normalizer)?)
}

/// Mean over bags of `(sum_{t in B} r_t - R(B))^2`.
pub fn reward_loss(tape: &mut Tape, rewards: Var, bags: &[BagTarget]) -> Result<Var, RbtError> {
    reward_loss_sum(tape, rewards, bags, bags.len() as f64)
}

/// `sum_{t in rows} |pred_t - target_t|^2 / normalizer`.
pub(crate) fn state_loss_sum(
    tape: &mut Tape,
    pred: Var,
    target: &Tensor,
    rows: &[usize],
    normalizer: f64,
) -> Result<Var, RbtError> {
    if tape.value(pred).shape() != target.shape() {
        return Err(RbtError::FeatureDim {
            expected: (target.rows(), target.cols()),
            got: (tape.value(pred).rows(), tape.value(pred).cols()),
        });
    }
    if rows.is_empty() {
        return Err(RbtError::EmptySteps);
    }
    let all = rows.len() == target.rows();
    let (p, t) = if all {
        (pred, tape.constant(target.clone()))
    } else {
        let t = tape.constant(target.clone());
        (tape.gather_rows(pred, rows)?, tape.gather_rows(t, rows)?)
    };
    let diff = tape.sub(p, t)?;
    let sq = tape.square(diff)?;
    let total = tape.sum_all(sq)?;
    Ok(tape.scale(total, 1.0 / normalizer)?)
}

/// Mean over steps of the squared distance `|s_hat_{t+1} - s_{t+1}|^2`.
pub fn state_loss(tape: &mut Tape, pred: Var, target: &Tensor) -> Result<Var, RbtError> {
    let rows: Vec<usize> = (0..target.rows()).collect();
    state_loss_sum(tape, pred, target, &rows, target.rows() as f64)
}

/// `L_r + beta * L_s`.
pub fn composite_loss(tape: &mut Tape, reward_loss: Var, state_loss: Var, beta: f64) -> Result<Var, RbtError> {
    if !(beta > 0.0) {
        return Err(RbtError::Config(format!("beta must be positive, got {beta}")));
    }
    let s = tape.scale(state_loss, beta)?;
    Ok(tape.add(reward_loss, s)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlab::SeededRng;
    use crate::numcore::{central_difference, relative_error};
    use rand::{Rng, SeedableRng};

    fn bag(start: usize, end: usize, reward: f64) -> BagTarget {
        BagTarget { start, end, reward }
    }

    #[test]
    fn exact_rewards_give_zero() {
        let hidden = vec![0.5, -1.0, 2.0, 0.25, 1.0];
        let mut tape = Tape::new();
        let r = tape.leaf(Tensor::vector(hidden.clone()).unwrap());
        let bags = [bag(0, 2, -0.5), bag(2, 5, 3.25)];
        let l = reward_loss(&mut tape, r, &bags).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);
    }

    #[test]
    fn zero_rewards_single_bag() {
        let mut tape = Tape::new();
        let r = tape.leaf(Tensor::zeros(&[4]));
        let l = reward_loss(&mut tape, r, &[bag(0, 4, 2.0)]).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 4.0);
        assert!(matches!(reward_loss(&mut tape, r, &[]), Err(RbtError::EmptyBags)));
    }

    #[test]
    fn reward_loss_formula() {
        let mut rng = SeededRng::seed_from_u64(3);
        let r: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bags = [bag(0, 3, 0.7), bag(2, 6, -1.1), bag(6, 10, 0.2)];
        let expect = bags
            .iter()
            .map(|b| (r[b.start..b.end].iter().sum::<f64>() - b.reward).powi(2))
            .sum::<f64>()
            / 3.0;
        let mut tape = Tape::new();
        let rv = tape.leaf(Tensor::vector(r).unwrap());
        let l = reward_loss(&mut tape, rv, &bags).unwrap();
        assert!((tape.value(l).item().unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn state_loss_cases() {
        let target = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]).unwrap();
        let mut tape = Tape::new();
        let p = tape.leaf(target.clone());
        let l = state_loss(&mut tape, p, &target).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);

        let mut shifted = target.clone();
        shifted.data_mut()[0] += 1.0;
        let p = tape.leaf(shifted);
        let l = state_loss(&mut tape, p, &target).unwrap();
        assert!((tape.value(l).item().unwrap() - 1.0 / 3.0).abs() < 1e-15);

        let wrong = tape.leaf(Tensor::zeros(&[3, 3]));
        assert!(state_loss(&mut tape, wrong, &target).is_err());

        let mut rng = SeededRng::seed_from_u64(4);
        let pred = Tensor::uniform(&[3, 2], -1.0, 1.0, &mut rng);
        let expect: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 3.0;
        let p = tape.leaf(pred);
        let l = state_loss(&mut tape, p, &target).unwrap();
        assert!((tape.value(l).item().unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn composite_recombines_and_rejects_zero_beta() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(0.75));
        let b = tape.leaf(Tensor::scalar(2.0));
        let c = composite_loss(&mut tape, a, b, 0.5).unwrap();
        assert_eq!(tape.value(c).item().unwrap(), 0.75 + 0.5 * 2.0);
        assert!(composite_loss(&mut tape, a, b, 0.0).is_err());
        let z = tape.leaf(Tensor::scalar(0.0));
        let c = composite_loss(&mut tape, z, z, 1.0).unwrap();
        assert_eq!(tape.value(c).item().unwrap(), 0.0);
    }

    #[test]
    fn decoder_gradient_matches_finite_differences() {
        let mut rng = SeededRng::seed_from_u64(6);
        let x = Tensor::uniform(&[5, 4], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[4, 3], -1.0, 1.0, &mut rng);
        let target = Tensor::uniform(&[5, 3], -1.0, 1.0, &mut rng);
        let loss_at = |wd: &[f64]| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let wv = tape.leaf(Tensor::new(&[4, 3], wd.to_vec()).unwrap());
            let p = tape.matmul(xv, wv).unwrap();
            let l = state_loss(&mut tape, p, &target).unwrap();
            (tape, wv, l)
        };
        let (tape, wv, l) = loss_at(w.data());
        let g = tape.backward(l).unwrap();
        let fd = central_difference(&mut |wd| {
            let (tape, _, l) = loss_at(wd);
            tape.value(l).item().unwrap()
        }, w.data(), 1e-5);
        for (a, b) in g.get(wv).unwrap().data().iter().zip(&fd) {
            assert!(relative_error(*a, *b) <= 1e-4);
        }
    }

    #[test]
    fn zero_and_identity_decoders() {
        let mut rng = SeededRng::seed_from_u64(7);
        let x = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let z = tape.leaf(Tensor::zeros(&[4, 2]));
        let p = tape.matmul(xv, z).unwrap();
        assert!(tape.value(p).data().iter().all(|&v| v == 0.0));
        // identity-like [4,2] decoder picks the first two embedding columns
        let id = tape.leaf(Tensor::new(&[4, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
        let p = tape.matmul(xv, id).unwrap();
        for t in 0..3 {
            assert_eq!(tape.value(p).row(t), &x.row(t)[..2]);
        }
    }
}
