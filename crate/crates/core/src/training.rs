//! Feature-matching loss, its gradient through a frozen backbone, and Adam.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::PatchPair;
use crate::detector::{DetectorBackend, FeaturePyramid};
use crate::net::PostProcNet;
use crate::{Error, Frame, Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: String| Err(Error::Config { field, reason });
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", format!("must lie in [0, 1), got {}", self.beta1));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", format!("must lie in [0, 1), got {}", self.beta2));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon", format!("must be positive, got {}", self.epsilon));
        }
        Ok(())
    }
}

/// Adam moments for a flat parameter vector. `step` counts completed updates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: AdamConfig, len: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        })
    }

    /// Applies one bias-corrected Adam update to `params`.
    pub fn update(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        adam_step_slice(
            &self.config,
            self.step,
            params,
            grads,
            &mut self.m,
            &mut self.v,
        );
        Ok(())
    }
}

/// Element-wise Adam update at 1-based step `t`. Each index is independent, so
/// updating a partition of the vector piecewise gives the same result.
pub fn adam_step_slice<T: Real>(
    cfg: &AdamConfig,
    t: u64,
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
) {
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one = T::one();
    let t = t.min(i32::MAX as u64) as i32;
    let c1 = T::lit(1.0 - libm::pow(cfg.beta1, t as f64));
    let c2 = T::lit(1.0 - libm::pow(cfg.beta2, t as f64));
    let lr = T::lit(cfg.learning_rate);
    let eps = T::lit(cfg.epsilon);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

fn map_mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> T {
    let n = T::lit(a.as_slice().len() as f64);
    let s: T = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    s / n
}

/// Mean over the three pyramid levels of each level's mean squared error.
pub fn feature_loss<T: Real>(a: &FeaturePyramid<T>, b: &FeaturePyramid<T>) -> Result<T> {
    if !a.same_geometry(b) {
        return Err(Error::Shape(String::from("feature pyramids differ in geometry")));
    }
    let total: T = a.maps().iter().zip(b.maps()).map(|(x, y)| map_mse(x, y)).sum();
    Ok(total / T::lit(3.0))
}

/// Loss and its gradient with respect to the maps of `a`.
pub fn feature_loss_grad<T: Real>(
    a: &FeaturePyramid<T>,
    b: &FeaturePyramid<T>,
) -> Result<(T, FeaturePyramid<T>)> {
    let loss = feature_loss(a, b)?;
    let mut grads = a.clone();
    for (g, (x, y)) in grads.maps_mut().iter_mut().zip(a.maps().iter().zip(b.maps())) {
        let scale = T::lit(2.0 / (3.0 * x.as_slice().len() as f64));
        for (gv, (&xv, &yv)) in g
            .as_mut_slice()
            .iter_mut()
            .zip(x.as_slice().iter().zip(y.as_slice()))
        {
            *gv = scale * (xv - yv);
        }
    }
    Ok((loss, grads))
}

/// Feature loss of the network output against the raw frame, for one pair.
pub fn pair_loss<T: Real, B: DetectorBackend<T> + ?Sized>(
    net: &PostProcNet<T>,
    backend: &B,
    pair: &PatchPair<T>,
) -> Result<T> {
    let out = net.forward(&pair.decoded)?;
    feature_loss(
        &backend.extract_features(&out)?,
        &backend.extract_features(&pair.raw)?,
    )
}

/// Loss and parameter gradient for one pair; the backbone stays frozen.
pub fn pair_gradient<T: Real, B: DetectorBackend<T> + ?Sized>(
    net: &PostProcNet<T>,
    backend: &B,
    pair: &PatchPair<T>,
) -> Result<(T, Vec<T>)> {
    let (out, tape) = net.forward_traced(&pair.decoded)?;
    let f_out = backend.extract_features(&out)?;
    let f_raw = backend.extract_features(&pair.raw)?;
    let (loss, grad_maps) = feature_loss_grad(&f_out, &f_raw)?;
    let grad_frame = backend.features_vjp(&out, &grad_maps)?;
    Ok((loss, net.backward(&tape, &grad_frame)?))
}

/// Averages per-pair results in the order given, so any parallel producer
/// that keeps pair order reduces to identical bits.
pub fn reduce_gradients<T: Real>(parts: Vec<(T, Vec<T>)>) -> Result<(T, Vec<T>)> {
    let n = parts.len();
    let mut it = parts.into_iter();
    let (mut loss, mut grad) = it
        .next()
        .ok_or_else(|| Error::Usage(String::from("cannot reduce an empty batch")))?;
    for (l, g) in it {
        if g.len() != grad.len() {
            return Err(Error::Shape(format!(
                "gradient lengths {} and {} differ",
                grad.len(),
                g.len()
            )));
        }
        loss = loss + l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a = *a + b;
        }
    }
    let inv = T::one() / T::lit(n as f64);
    for a in grad.iter_mut() {
        *a = *a * inv;
    }
    Ok((loss * inv, grad))
}

/// Mean loss and gradient over a batch, computed serially.
pub fn batch_gradient<T: Real, B: DetectorBackend<T> + ?Sized>(
    net: &PostProcNet<T>,
    backend: &B,
    batch: &[PatchPair<T>],
) -> Result<(T, Vec<T>)> {
    if batch.is_empty() {
        return Err(Error::Usage(String::from("training batch is empty")));
    }
    let parts = batch
        .iter()
        .map(|p| pair_gradient(net, backend, p))
        .collect::<Result<Vec<_>>>()?;
    reduce_gradients(parts)
}

/// Applies a reduced gradient to the network.
pub fn apply_gradient<T: Real>(
    net: &mut PostProcNet<T>,
    opt: &mut OptimizerState<T>,
    grad: &[T],
) -> Result<()> {
    opt.update(net.parameters_mut(), grad)
}

/// One optimization step over `batch`; returns the batch loss before the
/// update.
pub fn train_step<T: Real, B: DetectorBackend<T> + ?Sized>(
    net: &mut PostProcNet<T>,
    backend: &B,
    opt: &mut OptimizerState<T>,
    batch: &[PatchPair<T>],
) -> Result<T> {
    let (loss, grad) = batch_gradient(net, backend, batch)?;
    apply_gradient(net, opt, &grad)?;
    Ok(loss)
}

/// Runs the network over every frame of a sequence.
pub fn postprocess_frames<T: Real>(net: &PostProcNet<T>, frames: &[Frame<T>]) -> Result<Vec<Frame<T>>> {
    frames.iter().map(|f| net.forward(f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{ToyBackend, ToyColor};
    use crate::net::NetConfig;

    #[test]
    fn adam_first_and_second_step() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut opt = OptimizerState::<f64>::new(cfg, 1).unwrap();
        let mut p = vec![0.0];
        opt.update(&mut p, &[1.0]).unwrap();
        assert!((p[0] - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15);

        // second step with g = 0.5, recomputed by hand
        opt.update(&mut p, &[0.5]).unwrap();
        let m = 0.9 * 0.1 + 0.1 * 0.5;
        let v = 0.999 * 0.001 + 0.001 * 0.25;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.999f64 * 0.999);
        let want = -0.1 / (1.0 + 1e-8) - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] - want).abs() < 1e-12);
        assert_eq!(opt.step, 2);
    }

    #[test]
    fn adam_partition_invariant() {
        let cfg = AdamConfig::default();
        let grads: Vec<f64> = (0..10).map(|i| (i as f64 - 4.5) * 0.3).collect();
        let mut whole = vec![0.5; 10];
        let (mut m, mut v) = (vec![0.0; 10], vec![0.0; 10]);
        adam_step_slice(&cfg, 1, &mut whole, &grads, &mut m, &mut v);
        let mut parts = vec![0.5; 10];
        let (mut m2, mut v2) = (vec![0.0; 10], vec![0.0; 10]);
        let (pa, pb) = parts.split_at_mut(3);
        let (ma, mb) = m2.split_at_mut(3);
        let (va, vb) = v2.split_at_mut(3);
        adam_step_slice(&cfg, 1, pb, &grads[3..], mb, vb);
        adam_step_slice(&cfg, 1, pa, &grads[..3], ma, va);
        assert_eq!(whole, parts);
    }

    #[test]
    fn adam_config_errors_name_field() {
        let cfg = AdamConfig {
            beta2: 1.0,
            ..AdamConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { field: "beta2", .. })));
        let cfg = AdamConfig {
            learning_rate: -1.0,
            ..AdamConfig::default()
        };
        assert!(matches!(
            OptimizerState::<f32>::new(cfg, 3),
            Err(Error::Config { field: "learning_rate", .. })
        ));
    }

    #[test]
    fn constant_frames_loss_oracle() {
        // constant planes: only the value channel differs, gradients are zero
        let backend = ToyBackend::with_color(ToyColor::Luma);
        let a = Frame::filled(3, 32, 32, 0.5f64).unwrap();
        let b = Frame::filled(3, 32, 32, 0.6f64).unwrap();
        let fa = backend.extract_features(&a).unwrap();
        let fb = backend.extract_features(&b).unwrap();
        let loss = feature_loss(&fa, &fb).unwrap();
        // channels: value, d/dx, d/dy, mean -> two of four differ by 0.1
        let want = 2.0 * 0.01 / 4.0;
        assert!((loss - want).abs() < 1e-12, "{loss} vs {want}");
        assert_eq!(feature_loss(&fa, &fa).unwrap(), 0.0);
        assert!((feature_loss(&fb, &fa).unwrap() - loss).abs() < 1e-15);
    }

    fn small_net(seed: u64) -> PostProcNet<f64> {
        let config = NetConfig {
            base_width: 4,
            growth: 2,
            num_rrdb: 1,
            dense_layers_per_block: 3,
            dense_blocks_per_rrdb: 2,
            ..NetConfig::default()
        };
        let mut net = PostProcNet::build(config, seed).unwrap();
        // non-zero tail so the gradient reaches every layer
        let mut s = seed;
        for p in net.param_mut("tail.weight").unwrap() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            *p = ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.05;
        }
        net
    }

    fn textured(seed: u64, n: usize) -> Frame<f64> {
        Frame::from_fn(3, n, n, |c, y, x| {
            let t = (seed as f64) * 0.37 + c as f64 * 1.3 + y as f64 * 0.41 + x as f64 * 0.23;
            0.5 + 0.3 * (t.sin() * (0.7 * t).cos())
        })
        .unwrap()
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        for color in [ToyColor::Luma, ToyColor::Rgb] {
            let backend = ToyBackend::with_color(color);
            let net = small_net(3);
            let pair = PatchPair {
                decoded: textured(1, 16),
                raw: textured(2, 16),
                frame_index: 0,
                y: 0,
                x: 0,
            };
            let (_, grad) = pair_gradient(&net, &backend, &pair).unwrap();
            let h = 1e-6;
            let n = net.parameters().len();
            for idx in (0..n).step_by(n / 37 + 1).chain([n - 1]) {
                let mut plus = net.clone();
                plus.parameters_mut()[idx] += h;
                let mut minus = net.clone();
                minus.parameters_mut()[idx] -= h;
                let fd = (pair_loss(&plus, &backend, &pair).unwrap()
                    - pair_loss(&minus, &backend, &pair).unwrap())
                    / (2.0 * h);
                let err = (fd - grad[idx]).abs() / fd.abs().max(grad[idx].abs()).max(1e-8);
                assert!(err < 1e-3 || (fd - grad[idx]).abs() < 1e-10, "param {idx}: fd {fd} vs {}", grad[idx]);
            }
        }
    }

    #[test]
    fn training_reduces_loss_on_a_fixed_batch() {
        let backend = ToyBackend::with_color(ToyColor::Rgb);
        let mut net = small_net(5);
        let cfg = AdamConfig {
            learning_rate: 1e-3,
            ..AdamConfig::default()
        };
        let mut opt = OptimizerState::new(cfg, net.parameters().len()).unwrap();
        let batch = vec![PatchPair {
            decoded: textured(4, 16).cast::<f64>(),
            raw: textured(7, 16),
            frame_index: 0,
            y: 0,
            x: 0,
        }];
        let first = train_step(&mut net, &backend, &mut opt, &batch).unwrap();
        let mut last = first;
        for _ in 0..30 {
            last = train_step(&mut net, &backend, &mut opt, &batch).unwrap();
        }
        assert!(last < first, "{last} !< {first}");
        assert!(train_step(&mut net, &backend, &mut opt, &[]).is_err());
    }

    #[test]
    fn two_hundred_steps_halve_the_loss() {
        let backend = ToyBackend::with_color(ToyColor::Rgb);
        let mut net = small_net(9);
        let cfg = AdamConfig {
            learning_rate: 1e-3,
            ..AdamConfig::default()
        };
        let mut opt = OptimizerState::new(cfg, net.parameters().len()).unwrap();
        let raw = textured(11, 16);
        let decoded = Frame::clamped(raw.tensor().map(|v| v * 0.8 + 0.1));
        let batch = vec![PatchPair {
            decoded,
            raw,
            frame_index: 0,
            y: 0,
            x: 0,
        }];
        let first = pair_loss(&net, &backend, &batch[0]).unwrap();
        for _ in 0..200 {
            train_step(&mut net, &backend, &mut opt, &batch).unwrap();
        }
        let last = pair_loss(&net, &backend, &batch[0]).unwrap();
        assert!(last <= 0.5 * first, "{last} vs {first}");
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut opt = OptimizerState::<f64>::new(AdamConfig::default(), 4).unwrap();
        let mut p = vec![0.1, -0.2, 0.3, 0.0];
        let before = p.clone();
        opt.update(&mut p, &[0.0; 4]).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn identical_pairs_have_zero_loss_and_gradient() {
        let backend = ToyBackend::with_color(ToyColor::Rgb);
        let net = small_net(2);
        let f = textured(3, 16);
        let pair = PatchPair {
            decoded: f.clone(),
            raw: net.forward(&f).unwrap(),
            frame_index: 0,
            y: 0,
            x: 0,
        };
        let (loss, grad) = pair_gradient(&net, &backend, &pair).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn reduction_is_a_mean() {
        let (l, g) = reduce_gradients(vec![(1.0f64, vec![1.0, 2.0]), (3.0, vec![3.0, 6.0])]).unwrap();
        assert_eq!(l, 2.0);
        assert_eq!(g, vec![2.0, 4.0]);
        assert!(reduce_gradients::<f64>(vec![]).is_err());
    }
}
