//! Numerically stable accumulation of probabilities in log space.

/// Streaming log-sum-exp accumulator with a running maximum.
///
/// Maintains `log(sum_i exp(x_i))` over a stream of log-values without
/// leaving log space. The running sum is rescaled whenever a new maximum
/// arrives, so the accumulated terms stay in [0, 1].
#[derive(Debug, Clone)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
    count: u64,
}

impl LogSumExp {
    pub fn new() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            count: 0,
        }
    }

    pub fn add(&mut self, x: f64) {
        self.count += 1;
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            // rescale existing mass to the new maximum
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    /// log(sum of exponentials added so far); -inf if nothing finite was added.
    pub fn log_sum(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Merge another accumulator into this one (associative combine).
    pub fn merge(&mut self, other: &LogSumExp) {
        self.count += other.count;
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if self.max == f64::NEG_INFINITY {
            self.max = other.max;
            self.sum = other.sum;
            return;
        }
        if other.max <= self.max {
            self.sum += other.sum * (other.max - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - other.max).exp() + other.sum;
            self.max = other.max;
        }
    }
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self::new()
    }
}

/// log(exp(a) + exp(b)) for two values.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Relative tie tolerance used when comparing log-probabilities.
///
/// Two log-probabilities within `1e-12 * max(1, |reference|)` of each other
/// are treated as tied; comparisons against an observed value are inclusive,
/// so the observed outcome always belongs to its own rejection region.
pub const LOG_TIE_REL_TOL: f64 = 1e-12;

/// Inclusive "at most as probable" comparison on log-probabilities.
pub fn log_le_with_tie(lp: f64, lp_ref: f64) -> bool {
    if lp == f64::NEG_INFINITY {
        return true;
    }
    lp <= lp_ref + LOG_TIE_REL_TOL * lp_ref.abs().max(1.0)
}
