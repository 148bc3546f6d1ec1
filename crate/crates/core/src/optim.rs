//! Adam and the smoothed L1 kernel shared by the photometric objectives.

/// Smoothing constant of the Charbonnier kernel, below one 8-bit
/// quantization step.
pub const CHARBONNIER_DELTA: f64 = 1e-3;

/// `sqrt(x² + δ²) - δ`: zero at zero, |x| - δ asymptotically.
#[inline]
pub fn charbonnier(x: f64) -> f64 {
    (x * x + CHARBONNIER_DELTA * CHARBONNIER_DELTA).sqrt() - CHARBONNIER_DELTA
}

#[inline]
pub fn charbonnier_grad(x: f64) -> f64 {
    x / (x * x + CHARBONNIER_DELTA * CHARBONNIER_DELTA).sqrt()
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state for a flat parameter vector; each parameter carries its own
/// step size.
#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, params: AdamParams) -> Self {
        Adam {
            params,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One update of `x` against `grad`, `step_size(i)` giving the step of
    /// parameter `i`. Parameters with `step_size(i) == 0` stay frozen.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64], step_size: impl Fn(usize) -> f64) {
        debug_assert_eq!(x.len(), self.m.len());
        self.t += 1;
        let AdamParams { beta1, beta2, eps } = self.params;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for i in 0..x.len() {
            let lr = step_size(i);
            if lr == 0.0 {
                continue;
            }
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            x[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }

    /// Rescale the moments of parameter `i` after the parameter itself was
    /// multiplied by `s`.
    pub fn rescale(&mut self, i: usize, s: f64) {
        self.m[i] *= s;
        self.v[i] *= s * s;
    }
}
