//! Closed-form diffusion math: the linear beta schedule and its derived
//! constants, the forward (noising) marginal, the single reverse-step
//! update, and re-spacing onto a shorter step subsequence.
//!
//! All schedule arrays are f64 and immutable after construction.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// How the reverse-step noise scale is derived from the schedule.
///
/// `Beta` sets sigma_t^2 = beta_t; `BetaTilde` sets
/// sigma_t^2 = (1 - abar_{t-1}) / (1 - abar_t) * beta_t.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    Beta,
    BetaTilde,
}

impl std::fmt::Display for SigmaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SigmaMode::Beta => f.write_str("beta"),
            SigmaMode::BetaTilde => f.write_str("beta_tilde"),
        }
    }
}

impl std::str::FromStr for SigmaMode {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(SigmaMode::Beta),
            "beta_tilde" => Ok(SigmaMode::BetaTilde),
            other => Err(CoreError::InvalidConfig(format!(
                "unknown sigma mode '{other}' (expected beta or beta_tilde)"
            ))),
        }
    }
}

/// Generator parameters for a schedule. A run is reproducible from these
/// five values alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub t: usize,
    pub beta1: f64,
    pub beta_t: f64,
    pub sigma_mode: SigmaMode,
    /// Re-spacing interval; 1 means the full schedule.
    pub delta: usize,
}

impl ScheduleSpec {
    /// Builds the schedule, re-spaced when `delta > 1`.
    pub fn build(&self) -> Result<NoiseSchedule> {
        let full = build_schedule(self.t, self.beta1, self.beta_t, self.sigma_mode)?;
        if self.delta > 1 {
            respace(&full, self.delta)
        } else {
            Ok(full)
        }
    }

    /// Serializes to a `key = value` text file body.
    pub fn to_kv(&self) -> String {
        format!(
            "t = {}\nbeta1 = {}\nbeta_t = {}\nsigma_mode = {}\ndelta = {}\n",
            self.t, self.beta1, self.beta_t, self.sigma_mode, self.delta
        )
    }

    /// Parses the `key = value` format written by [`ScheduleSpec::to_kv`].
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut t = None;
        let mut beta1 = None;
        let mut beta_t = None;
        let mut sigma_mode = None;
        let mut delta = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CoreError::InvalidConfig(format!("schedule line {} is not key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let parse_err = |e: String| CoreError::InvalidConfig(format!("schedule {key}: {e}"));
            match key {
                "t" => t = Some(value.parse::<usize>().map_err(|e| parse_err(e.to_string()))?),
                "beta1" => {
                    beta1 = Some(value.parse::<f64>().map_err(|e| parse_err(e.to_string()))?)
                }
                "beta_t" => {
                    beta_t = Some(value.parse::<f64>().map_err(|e| parse_err(e.to_string()))?)
                }
                "sigma_mode" => sigma_mode = Some(value.parse::<SigmaMode>()?),
                "delta" => {
                    delta = Some(value.parse::<usize>().map_err(|e| parse_err(e.to_string()))?)
                }
                other => {
                    return Err(CoreError::InvalidConfig(format!(
                        "unknown schedule key '{other}'"
                    )))
                }
            }
        }
        let missing = |k: &str| CoreError::InvalidConfig(format!("schedule key '{k}' missing"));
        Ok(Self {
            t: t.ok_or_else(|| missing("t"))?,
            beta1: beta1.ok_or_else(|| missing("beta1"))?,
            beta_t: beta_t.ok_or_else(|| missing("beta_t"))?,
            sigma_mode: sigma_mode.ok_or_else(|| missing("sigma_mode"))?,
            delta: delta.ok_or_else(|| missing("delta"))?,
        })
    }
}

/// Precomputed schedule arrays. Index 0 holds step t = 1.
///
/// For a re-spaced schedule, `timestep_map` gives the original timestep for
/// each re-spaced index; the denoiser is always queried with original
/// timesteps.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
    timestep_map: Option<Vec<usize>>,
    sigma_mode: SigmaMode,
}

impl NoiseSchedule {
    /// Number of usable steps (T for a full schedule, T/delta re-spaced).
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn is_respaced(&self) -> bool {
        self.timestep_map.is_some()
    }

    pub fn sigma_mode(&self) -> SigmaMode {
        self.sigma_mode
    }

    /// The original timestep to feed the denoiser at schedule index `t`.
    pub fn original_t(&self, t: usize) -> usize {
        match &self.timestep_map {
            Some(map) => map[t - 1],
            None => t,
        }
    }

    pub fn timestep_map(&self) -> Option<&[usize]> {
        self.timestep_map.as_deref()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(CoreError::InvalidTimestep {
                t,
                max: self.steps(),
            });
        }
        Ok(())
    }
}

fn sigmas_from(beta: &[f64], alpha_bar: &[f64], mode: SigmaMode) -> Vec<f64> {
    match mode {
        SigmaMode::Beta => beta.iter().map(|b| b.sqrt()).collect(),
        SigmaMode::BetaTilde => (0..beta.len())
            .map(|i| {
                let abar_prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                ((1.0 - abar_prev) / (1.0 - alpha_bar[i]) * beta[i]).sqrt()
            })
            .collect(),
    }
}

/// Builds the linear schedule beta_t = (beta_T - beta_1)(t-1)/(T-1) + beta_1
/// with all derived constants.
pub fn build_schedule(
    t_total: usize,
    beta1: f64,
    beta_t: f64,
    sigma_mode: SigmaMode,
) -> Result<NoiseSchedule> {
    if t_total < 2 {
        return Err(CoreError::InvalidSchedule(format!(
            "T must be >= 2, got {t_total}"
        )));
    }
    if !(beta1 > 0.0 && beta1 <= beta_t && beta_t < 1.0) {
        return Err(CoreError::InvalidSchedule(format!(
            "need 0 < beta1 <= betaT < 1, got beta1={beta1}, betaT={beta_t}"
        )));
    }
    let n = t_total;
    let mut beta = Vec::with_capacity(n);
    for i in 0..n {
        beta.push((beta_t - beta1) * i as f64 / (n - 1) as f64 + beta1);
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(n);
    let mut prod = 1.0;
    for a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    let sigma = sigmas_from(&beta, &alpha_bar, sigma_mode);
    Ok(NoiseSchedule {
        beta,
        alpha,
        alpha_bar,
        sigma,
        timestep_map: None,
        sigma_mode,
    })
}

/// A noised image together with its schedule position. `t = 0` is a
/// finished sample; `t = steps()` is the pure-noise input.
#[derive(Debug, Clone)]
pub struct LatentImage {
    pub pixels: Array2<f64>,
    pub t: usize,
}

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(CoreError::ShapeMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

/// Closed-form forward marginal: x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps.
pub fn forward_diffuse(
    x0: &Array2<f64>,
    t: usize,
    eps: &Array2<f64>,
    schedule: &NoiseSchedule,
) -> Result<LatentImage> {
    schedule.check_t(t)?;
    check_same_shape(x0, eps)?;
    let abar = schedule.alpha_bar(t);
    let a = abar.sqrt();
    let b = (1.0 - abar).sqrt();
    let pixels = x0.mapv(|v| a * v) + &eps.mapv(|v| b * v);
    Ok(LatentImage { pixels, t })
}

/// One reverse update:
/// x_{t-1} = (x_t - (1-alpha_t)/sqrt(1-abar_t) * eps_hat) / sqrt(alpha_t) + sigma_t z.
///
/// At t = 1 the noise term is suppressed so the returned x0 is
/// deterministic given `eps_hat`.
pub fn reverse_step(
    xt: &LatentImage,
    eps_hat: &Array2<f64>,
    schedule: &NoiseSchedule,
    z: &Array2<f64>,
) -> Result<LatentImage> {
    let t = xt.t;
    schedule.check_t(t)?;
    check_same_shape(&xt.pixels, eps_hat)?;
    check_same_shape(&xt.pixels, z)?;
    let alpha = schedule.alpha(t);
    let abar = schedule.alpha_bar(t);
    let coef = (1.0 - alpha) / (1.0 - abar).sqrt();
    let sqrt_alpha = alpha.sqrt();
    let mut pixels = ndarray::Zip::from(&xt.pixels)
        .and(eps_hat)
        .map_collect(|&x, &e| (x - coef * e) / sqrt_alpha);
    if t > 1 {
        let s = schedule.sigma(t);
        pixels.zip_mut_with(z, |p, &zv| *p += s * zv);
    }
    Ok(LatentImage { pixels, t: t - 1 })
}

/// Re-spaces onto the subsequence {1, 1+delta, 1+2*delta, ...} of original
/// timesteps (T/delta entries, final entry mapped to T). The re-spaced
/// alpha_bar equals the original alpha_bar at each mapped timestep exactly;
/// beta is recomputed from consecutive alpha_bar ratios.
pub fn respace(schedule: &NoiseSchedule, delta: usize) -> Result<NoiseSchedule> {
    if schedule.is_respaced() {
        return Err(CoreError::InvalidSchedule(
            "cannot re-space an already re-spaced schedule".into(),
        ));
    }
    let t_total = schedule.steps();
    if delta == 0 || delta > t_total {
        return Err(CoreError::InvalidSchedule(format!(
            "delta must be in 1..={t_total}, got {delta}"
        )));
    }
    if t_total % delta != 0 {
        return Err(CoreError::InvalidSchedule(format!(
            "delta {delta} does not divide T {t_total} evenly"
        )));
    }
    let n = t_total / delta;
    let mut map: Vec<usize> = (0..n).map(|k| 1 + k * delta).collect();
    map[n - 1] = t_total;

    let alpha_bar: Vec<f64> = map.iter().map(|&t| schedule.alpha_bar(t)).collect();
    let mut beta = Vec::with_capacity(n);
    for i in 0..n {
        let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
        beta.push(1.0 - alpha_bar[i] / prev);
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let sigma = sigmas_from(&beta, &alpha_bar, schedule.sigma_mode);
    Ok(NoiseSchedule {
        beta,
        alpha,
        alpha_bar,
        sigma,
        timestep_map: Some(map),
        sigma_mode: schedule.sigma_mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn paper_schedule() -> NoiseSchedule {
        build_schedule(1000, 1e-4, 0.02, SigmaMode::Beta).unwrap()
    }

    fn normal_image(h: usize, w: usize, rng: &mut impl Rng) -> Array2<f64> {
        Array2::from_shape_fn((h, w), |_| rng.sample(StandardNormal))
    }

    /// Compensated (double-double) product: an independent high-precision
    /// route for the cumulative alpha_bar product.
    fn dd_product(factors: &[f64]) -> f64 {
        let mut hi = 1.0f64;
        let mut lo = 0.0f64;
        for &a in factors {
            let p = hi * a;
            let e = hi.mul_add(a, -p);
            hi = p;
            lo = lo * a + e;
        }
        hi + lo
    }

    #[test]
    fn linear_endpoints_match_configuration() {
        let s = paper_schedule();
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.beta(1000), 0.02);
        assert_eq!(s.alpha_bar(1), 1.0 - 1e-4);
    }

    #[test]
    fn alpha_bar_final_matches_high_precision_product() {
        let s = paper_schedule();
        let alphas: Vec<f64> = (1..=1000).map(|t| s.alpha(t)).collect();
        let dd = dd_product(&alphas);
        let got = s.alpha_bar(1000);
        assert!(
            ((got - dd) / dd).abs() < 1e-10,
            "abar_1000 {got} vs compensated product {dd}"
        );
        // frozen reference value computed with 60-digit arithmetic
        let reference = 4.0358297653756835e-5;
        assert!(((got - reference) / reference).abs() < 1e-10);
    }

    #[test]
    fn alpha_bar_strictly_decreasing_and_bounded() {
        let s = paper_schedule();
        for t in 2..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        assert!(s.alpha_bar(1000) > 0.0);
        assert!(s.alpha_bar(1) < 1.0);
        for t in 1..=1000 {
            assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
            assert_eq!(s.alpha(t), 1.0 - s.beta(t));
            assert!(s.sigma(t) >= 0.0);
        }
    }

    #[test]
    fn reverse_order_product_agrees() {
        let s = paper_schedule();
        let mut prod = 1.0;
        for t in (1..=1000).rev() {
            prod *= s.alpha(t);
        }
        let got = s.alpha_bar(1000);
        assert!(((got - prod) / prod).abs() < 1e-12);
    }

    #[test]
    fn invalid_preconditions_rejected() {
        assert!(build_schedule(1, 1e-4, 0.02, SigmaMode::Beta).is_err());
        assert!(build_schedule(100, 0.0, 0.02, SigmaMode::Beta).is_err());
        assert!(build_schedule(100, 0.03, 0.02, SigmaMode::Beta).is_err());
        assert!(build_schedule(100, 1e-4, 1.0, SigmaMode::Beta).is_err());
    }

    #[test]
    fn forward_noise_free_and_signal_free_cases() {
        let s = paper_schedule();
        let mut rng = substream(11, "fwd");
        let x0 = normal_image(4, 4, &mut rng);
        let zeros = Array2::zeros((4, 4));
        for t in [1, 500, 1000] {
            let xt = forward_diffuse(&x0, t, &zeros, &s).unwrap();
            let want = x0.mapv(|v| s.alpha_bar(t).sqrt() * v);
            assert_eq!(xt.pixels, want);

            let eps = normal_image(4, 4, &mut rng);
            let xt = forward_diffuse(&zeros, t, &eps, &s).unwrap();
            let want = eps.mapv(|v| (1.0 - s.alpha_bar(t)).sqrt() * v);
            assert_eq!(xt.pixels, want);
        }
        let bad = Array2::zeros((4, 5));
        assert!(matches!(
            forward_diffuse(&x0, 1, &bad, &s),
            Err(CoreError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            forward_diffuse(&x0, 0, &zeros, &s),
            Err(CoreError::InvalidTimestep { .. })
        ));
        assert!(forward_diffuse(&x0, 1001, &zeros, &s).is_err());
    }

    #[test]
    fn forward_marginal_monte_carlo_at_final_step() {
        // 10,000 draws at t = T: per-pixel sample mean within 4 standard
        // errors of sqrt(abar_T) x0, sample variance within 5% of 1-abar_T.
        let s = paper_schedule();
        let mut rng = substream(42, "mc");
        let x0 = normal_image(4, 4, &mut rng).mapv(|v| v.tanh());
        let n = 10_000usize;
        let mut sum = Array2::<f64>::zeros((4, 4));
        let mut sum_sq = Array2::<f64>::zeros((4, 4));
        for _ in 0..n {
            let eps = normal_image(4, 4, &mut rng);
            let xt = forward_diffuse(&x0, 1000, &eps, &s).unwrap();
            sum += &xt.pixels;
            sum_sq += &xt.pixels.mapv(|v| v * v);
        }
        let abar = s.alpha_bar(1000);
        let mean_true = x0.mapv(|v| abar.sqrt() * v);
        let var_true = 1.0 - abar;
        let se = (var_true / n as f64).sqrt();
        for idx in 0..16 {
            let (i, j) = (idx / 4, idx % 4);
            let m = sum[[i, j]] / n as f64;
            assert!(
                (m - mean_true[[i, j]]).abs() < 4.0 * se,
                "pixel mean off: {m} vs {}",
                mean_true[[i, j]]
            );
            let var = sum_sq[[i, j]] / n as f64 - m * m;
            assert!(
                ((var - var_true) / var_true).abs() < 0.05,
                "pixel variance off: {var} vs {var_true}"
            );
        }
    }

    #[test]
    fn reverse_step_zero_corrections() {
        let s = paper_schedule();
        let mut rng = substream(3, "rev");
        let x = normal_image(4, 4, &mut rng);
        let zeros = Array2::zeros((4, 4));
        for t in [2usize, 100, 1000] {
            let xt = LatentImage {
                pixels: x.clone(),
                t,
            };
            let out = reverse_step(&xt, &zeros, &s, &zeros).unwrap();
            let want = x.mapv(|v| v / s.alpha(t).sqrt());
            assert_eq!(out.pixels, want);
            assert_eq!(out.t, t - 1);
        }
    }

    #[test]
    fn one_step_inversion_identity_at_t1() {
        // With the true eps supplied, the t=1 update algebraically inverts
        // the forward map (abar_1 = alpha_1 and z is suppressed).
        let s = paper_schedule();
        let mut rng = substream(4, "inv");
        let x0 = normal_image(8, 8, &mut rng);
        let eps = normal_image(8, 8, &mut rng);
        let x1 = forward_diffuse(&x0, 1, &eps, &s).unwrap();
        let z = normal_image(8, 8, &mut rng); // must be ignored at t=1
        let back = reverse_step(&x1, &eps, &s, &z).unwrap();
        assert_eq!(back.t, 0);
        let max_err = (&back.pixels - &x0)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_err < 1e-6, "max inversion error {max_err}");
    }

    #[test]
    fn reverse_step_noise_difference_is_sigma_scaled() {
        let s = paper_schedule();
        let mut rng = substream(5, "zdiff");
        let xt = LatentImage {
            pixels: normal_image(4, 4, &mut rng),
            t: 700,
        };
        let eps_hat = normal_image(4, 4, &mut rng);
        let z1 = normal_image(4, 4, &mut rng);
        let z2 = normal_image(4, 4, &mut rng);
        let o1 = reverse_step(&xt, &eps_hat, &s, &z1).unwrap();
        let o2 = reverse_step(&xt, &eps_hat, &s, &z2).unwrap();
        let diff = &o1.pixels - &o2.pixels;
        let want = (&z1 - &z2).mapv(|v| s.sigma(700) * v);
        let max_err = (&diff - &want).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_err < 1e-12);
    }

    #[test]
    fn reverse_step_rejects_t0() {
        let s = paper_schedule();
        let zeros = Array2::zeros((4, 4));
        let xt = LatentImage {
            pixels: zeros.clone(),
            t: 0,
        };
        assert!(matches!(
            reverse_step(&xt, &zeros, &s, &zeros),
            Err(CoreError::InvalidTimestep { .. })
        ));
    }

    #[test]
    fn reverse_step_is_linear() {
        // superposition in (xt, eps_hat, z) at fixed t, checked to 1e-10
        let s = paper_schedule();
        let mut rng = substream(6, "lin");
        let t = 321;
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| normal_image(4, 4, rng);
        let (x1, e1, z1) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let (x2, e2, z2) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let (a, b) = (0.7, -1.3);
        let lhs = reverse_step(
            &LatentImage {
                pixels: x1.mapv(|v| a * v) + &x2.mapv(|v| b * v),
                t,
            },
            &(e1.mapv(|v| a * v) + &e2.mapv(|v| b * v)),
            &s,
            &(z1.mapv(|v| a * v) + &z2.mapv(|v| b * v)),
        )
        .unwrap();
        let r1 = reverse_step(
            &LatentImage {
                pixels: x1.clone(),
                t,
            },
            &e1,
            &s,
            &z1,
        )
        .unwrap();
        let r2 = reverse_step(
            &LatentImage {
                pixels: x2.clone(),
                t,
            },
            &e2,
            &s,
            &z2,
        )
        .unwrap();
        let want = r1.pixels.mapv(|v| a * v) + &r2.pixels.mapv(|v| b * v);
        let max_err = (&lhs.pixels - &want)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_err < 1e-10, "superposition violated by {max_err}");
    }

    #[test]
    fn x0_recovery_round_trip_at_every_t() {
        let s = paper_schedule();
        let mut rng = substream(7, "round");
        let x0 = normal_image(4, 4, &mut rng).mapv(|v| v.tanh());
        for t in 1..=1000 {
            let eps = normal_image(4, 4, &mut rng);
            let xt = forward_diffuse(&x0, t, &eps, &s).unwrap();
            let abar = s.alpha_bar(t);
            let est = (&xt.pixels - &eps.mapv(|v| (1.0 - abar).sqrt() * v))
                .mapv(|v| v / abar.sqrt());
            let max_err = (&est - &x0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(max_err < 1e-6, "t={t}: recovery error {max_err}");
        }
    }

    #[test]
    fn respace_paper_config_yields_50_steps() {
        let s = paper_schedule();
        let r = respace(&s, 20).unwrap();
        assert_eq!(r.steps(), 50);
        let map = r.timestep_map().unwrap();
        assert_eq!(map[0], 1);
        assert_eq!(map[1], 21);
        assert_eq!(map[48], 961);
        assert_eq!(map[49], 1000);
        // alpha_bar matches the original at mapped timesteps exactly
        for i in 1..=50 {
            assert_eq!(r.alpha_bar(i), s.alpha_bar(r.original_t(i)));
        }
        assert_eq!(r.beta(1), 1.0 - s.alpha_bar(1));
    }

    #[test]
    fn respace_delta_one_recovers_beta() {
        let s = paper_schedule();
        let r = respace(&s, 1).unwrap();
        assert_eq!(r.steps(), 1000);
        for t in 1..=1000 {
            let (a, b) = (r.beta(t), s.beta(t));
            assert!(
                ((a - b) / b).abs() < 1e-12,
                "t={t}: respaced beta {a} vs original {b}"
            );
            assert_eq!(r.original_t(t), t);
        }
    }

    #[test]
    fn respace_preserves_forward_marginals() {
        let s = paper_schedule();
        let r = respace(&s, 20).unwrap();
        let mut rng = substream(8, "marg");
        let x0 = normal_image(4, 4, &mut rng);
        let eps = normal_image(4, 4, &mut rng);
        for i in [1usize, 17, 50] {
            let orig = forward_diffuse(&x0, r.original_t(i), &eps, &s).unwrap();
            let resp = forward_diffuse(&x0, i, &eps, &r).unwrap();
            assert_eq!(orig.pixels, resp.pixels);
        }
    }

    #[test]
    fn respace_invalid_deltas() {
        let s = paper_schedule();
        assert!(respace(&s, 0).is_err());
        assert!(respace(&s, 1001).is_err());
        assert!(respace(&s, 3).is_err()); // does not divide 1000
        let r = respace(&s, 20).unwrap();
        assert!(respace(&r, 2).is_err()); // no double re-spacing
    }

    #[test]
    fn sigma_modes() {
        let s = build_schedule(100, 1e-3, 0.05, SigmaMode::Beta).unwrap();
        for t in 1..=100 {
            assert_eq!(s.sigma(t), s.beta(t).sqrt());
        }
        let s = build_schedule(100, 1e-3, 0.05, SigmaMode::BetaTilde).unwrap();
        assert_eq!(s.sigma(1), 0.0);
        for t in 2..=100 {
            let want =
                ((1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t)).sqrt();
            assert_eq!(s.sigma(t), want);
        }
    }

    #[test]
    fn schedule_spec_kv_round_trip() {
        let spec = ScheduleSpec {
            t: 1000,
            beta1: 1e-4,
            beta_t: 0.02,
            sigma_mode: SigmaMode::BetaTilde,
            delta: 20,
        };
        let text = spec.to_kv();
        let back = ScheduleSpec::from_kv(&text).unwrap();
        assert_eq!(spec, back);
        assert!(ScheduleSpec::from_kv("t = 10\nbogus = 1").is_err());
        let sched = spec.build().unwrap();
        assert_eq!(sched.steps(), 50);
        assert!(sched.is_respaced());
    }
}
