//! Binary sum-tree over nonnegative weights: O(log n) point update and
//! weight-proportional sampling, O(n) bulk rebuild.

#[derive(Clone, Debug)]
pub struct SumTree {
    len: usize,
    cap: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(len: usize) -> Self {
        let cap = len.max(1).next_power_of_two();
        SumTree {
            len,
            cap,
            nodes: vec![0.0; 2 * cap],
        }
    }

    pub fn from_weights(w: &[f64]) -> Self {
        let mut t = Self::new(w.len());
        t.rebuild(w);
        t
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.cap + i]
    }

    /// Set one weight and recompute its ancestors from their children.
    pub fn set(&mut self, i: usize, w: f64) {
        debug_assert!(i < self.len && w >= 0.0);
        let mut k = self.cap + i;
        self.nodes[k] = w;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Replace all weights at once.
    pub fn rebuild(&mut self, w: &[f64]) {
        debug_assert_eq!(w.len(), self.len);
        self.nodes[self.cap..self.cap + self.len].copy_from_slice(w);
        for k in (1..self.cap).rev() {
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Index `i` such that the prefix sum of weights before `i` is at most
    /// `u` and the prefix through `i` exceeds it. `u` should lie in
    /// `[0, total)`; leaves with zero weight are never returned.
    pub fn sample(&self, u: f64) -> usize {
        let mut u = u.max(0.0);
        let mut k = 1;
        while k < self.cap {
            let left = self.nodes[2 * k];
            let right = self.nodes[2 * k + 1];
            if u < left || right <= 0.0 {
                k *= 2;
            } else {
                u -= left;
                k = 2 * k + 1;
            }
        }
        let mut i = k - self.cap;
        // Rounding can strand `u` on a zero leaf at a subtree boundary.
        if self.nodes[k] <= 0.0 {
            i = (0..self.len)
                .rev()
                .find(|&j| self.get(j) > 0.0)
                .unwrap_or(i);
        }
        i
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_and_updates() {
        let mut t = SumTree::from_weights(&[1.0, 2.0, 3.0]);
        assert_eq!(t.total(), 6.0);
        t.set(1, 0.5);
        assert_eq!(t.total(), 4.5);
        assert_eq!(t.get(1), 0.5);
        t.rebuild(&[0.0, 0.0, 1.0]);
        assert_eq!(t.total(), 1.0);
    }

    #[test]
    fn sampling_respects_prefix_sums() {
        let t = SumTree::from_weights(&[1.0, 0.0, 2.0, 1.0, 0.0]);
        assert_eq!(t.sample(0.0), 0);
        assert_eq!(t.sample(0.999), 0);
        assert_eq!(t.sample(1.0), 2);
        assert_eq!(t.sample(2.999), 2);
        assert_eq!(t.sample(3.5), 3);
        // Past the end lands on the last positive weight.
        assert_eq!(t.sample(4.0), 3);
    }

    #[test]
    fn empirical_frequencies() {
        use rand::Rng;
        let w = [0.1, 0.4, 0.0, 0.5];
        let t = SumTree::from_weights(&w);
        let mut r = crate::rng::stream(1, 0);
        let mut hits = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            hits[t.sample(r.random::<f64>() * t.total())] += 1;
        }
        assert_eq!(hits[2], 0);
        for (h, p) in hits.iter().zip(w) {
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*h as f64 - n as f64 * p).abs() <= 5.0 * sd + 1e-9);
        }
    }
}
