//! Hashed perceptron deciding between a transaction and the original lock.

use serde::Serialize;

pub const MIN_WEIGHT: i8 = -16;
pub const MAX_WEIGHT: i8 = 15;
pub const TABLE_SIZE: usize = 4096;
pub const DECAY_THRESHOLD: u32 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Transactional,
    Lock,
}

/// Two weight tables indexed by the calling-context feature and by the
/// mutex-xor-context feature, each cell with a lock-decision counter.
#[derive(Clone, Debug)]
pub struct Perceptron {
    weights: [Vec<i8>; 2],
    counters: [Vec<u32>; 2],
    mask: u64,
}

impl Default for Perceptron {
    fn default() -> Self {
        Self::new(TABLE_SIZE)
    }
}

fn saturate(w: i8, delta: i8) -> i8 {
    (w as i16 + delta as i16).clamp(MIN_WEIGHT as i16, MAX_WEIGHT as i16) as i8
}

impl Perceptron {
    /// `size` must be a power of two.
    pub fn new(size: usize) -> Self {
        assert!(size.is_power_of_two(), "table size must be a power of two");
        Perceptron {
            weights: [vec![0; size], vec![0; size]],
            counters: [vec![0; size], vec![0; size]],
            mask: size as u64 - 1,
        }
    }

    pub fn table_size(&self) -> usize {
        self.weights[0].len()
    }

    /// Table indices for an (optilock, mutex) address pair.
    pub fn indices(&self, opti: u64, mutex: u64) -> [usize; 2] {
        [(opti & self.mask) as usize, ((mutex ^ opti) & self.mask) as usize]
    }

    pub fn weights_at(&self, idx: [usize; 2]) -> [i8; 2] {
        [self.weights[0][idx[0]], self.weights[1][idx[1]]]
    }

    pub fn counters_at(&self, idx: [usize; 2]) -> [u32; 2] {
        [self.counters[0][idx[0]], self.counters[1][idx[1]]]
    }

    pub fn set_weights(&mut self, idx: [usize; 2], w: [i8; 2]) {
        for t in 0..2 {
            self.weights[t][idx[t]] = w[t].clamp(MIN_WEIGHT, MAX_WEIGHT);
        }
    }

    pub fn decide(&self, idx: [usize; 2]) -> Decision {
        let [a, b] = self.weights_at(idx);
        if a as i16 + b as i16 >= 0 {
            Decision::Transactional
        } else {
            Decision::Lock
        }
    }

    /// Whether either cell has seen `threshold` consecutive lock decisions.
    pub fn decayed(&self, idx: [usize; 2], threshold: u32) -> bool {
        self.counters_at(idx).iter().any(|&c| c >= threshold)
    }

    /// Forget the cells' weights and counters.
    pub fn reset(&mut self, idx: [usize; 2]) {
        for t in 0..2 {
            self.weights[t][idx[t]] = 0;
            self.counters[t][idx[t]] = 0;
        }
    }

    pub fn count_lock_decision(&mut self, idx: [usize; 2]) {
        for t in 0..2 {
            self.counters[t][idx[t]] = self.counters[t][idx[t]].saturating_add(1);
        }
    }

    /// A transaction committed: encourage elision and clear the counters.
    pub fn reward(&mut self, idx: [usize; 2]) {
        for t in 0..2 {
            self.weights[t][idx[t]] = saturate(self.weights[t][idx[t]], 1);
            self.counters[t][idx[t]] = 0;
        }
    }

    /// Elision was predicted but fell back to the lock.
    pub fn penalize(&mut self, idx: [usize; 2]) {
        for t in 0..2 {
            self.weights[t][idx[t]] = saturate(self.weights[t][idx[t]], -1);
        }
    }

    pub fn all_weights(&self) -> impl Iterator<Item = i8> + '_ {
        self.weights.iter().flatten().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fresh_cells_predict_a_transaction() {
        let p = Perceptron::default();
        assert_eq!(p.decide(p.indices(0x1000, 0x2000_0008)), Decision::Transactional);
    }

    #[test]
    fn negative_sum_predicts_the_lock() {
        let mut p = Perceptron::default();
        let idx = p.indices(0x1230, 0x2000_0040);
        p.set_weights(idx, [-5, 4]);
        assert_eq!(p.decide(idx), Decision::Lock);
        p.set_weights(idx, [-4, 4]);
        assert_eq!(p.decide(idx), Decision::Transactional);
    }

    #[test]
    fn features_use_low_bits_and_xor() {
        let p = Perceptron::default();
        assert_eq!(p.indices(0x1_0123, 0x2000_0456), [0x123, 0x456 ^ 0x123]);
    }

    #[test]
    fn reward_clears_counters() {
        let mut p = Perceptron::default();
        let idx = p.indices(16, 8);
        p.count_lock_decision(idx);
        p.count_lock_decision(idx);
        assert_eq!(p.counters_at(idx), [2, 2]);
        p.reward(idx);
        assert_eq!(p.counters_at(idx), [0, 0]);
        assert_eq!(p.weights_at(idx), [1, 1]);
    }

    #[test]
    fn one_failure_flips_a_fresh_cell() {
        let mut p = Perceptron::default();
        let idx = p.indices(0x40, 0x2000_0000);
        p.penalize(idx);
        assert_eq!(p.decide(idx), Decision::Lock);
    }

    #[derive(Clone, Debug)]
    enum Op {
        Reward,
        Penalize,
        Lock,
        Reset,
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![Just(Op::Reward), Just(Op::Penalize), Just(Op::Lock), Just(Op::Reset)]
    }

    proptest! {
        #[test]
        fn weights_stay_in_range(ops in prop::collection::vec((op(), 0u64..64, 0u64..64), 0..400)) {
            let mut p = Perceptron::new(16);
            for (o, a, m) in ops {
                let idx = p.indices(a, m);
                match o {
                    Op::Reward => p.reward(idx),
                    Op::Penalize => p.penalize(idx),
                    Op::Lock => p.count_lock_decision(idx),
                    Op::Reset => p.reset(idx),
                }
                prop_assert!(p.all_weights().all(|w| (MIN_WEIGHT..=MAX_WEIGHT).contains(&w)));
            }
        }
    }
}
