//! Classical Bloch-vector dynamics of N dispersively driven qubits.
//!
//! Each spin precesses about z at rate 2[γ|α(t)|² + η_j(t)] and about x at
//! rate Δ_eff, where |α(t)|² = [∫₀ᵗ f_e]² is the photon number of the
//! displaced input mode.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{derive_seed, dispersive_shift, ModelParams, WhiteNoise};
use crate::parallel::map_indexed;

/// Seed stream for per-spin η noise.
pub const SPIN_NOISE_STREAM: u64 = 0x4e03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinState {
    pub spins: Vec<[f64; 3]>,
}

impl SpinState {
    /// s^z = 0, s^x = ±1 for every spin.
    pub fn x_polarised(n: usize, s_x0: f64) -> Self {
        Self {
            spins: vec![[s_x0, 0.0, 0.0]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn total_sz(&self) -> f64 {
        self.spins.iter().map(|s| s[2]).sum()
    }

    pub fn total_sx(&self) -> f64 {
        self.spins.iter().map(|s| s[0]).sum()
    }

    pub fn max_norm_error(&self) -> f64 {
        self.spins
            .iter()
            .map(|s| ((s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Slow input envelope f_e(t). α(t) = −i∫₀ᵗ f_e.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriveProfile {
    Zero,
    Constant {
        value: f64,
    },
    /// amplitude·cos(frequency·t + phase)
    Cosine {
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// Samples f_e(k·dt), linearly interpolated.
    Sampled {
        dt: f64,
        values: Vec<f64>,
    },
}

impl DriveProfile {
    pub fn envelope(&self, t: f64) -> f64 {
        match self {
            DriveProfile::Zero => 0.0,
            DriveProfile::Constant { value } => *value,
            DriveProfile::Cosine {
                amplitude,
                frequency,
                phase,
            } => amplitude * (frequency * t + phase).cos(),
            DriveProfile::Sampled { dt, values } => {
                if values.is_empty() {
                    return 0.0;
                }
                let x = (t / dt).max(0.0);
                let k = x.floor() as usize;
                if k + 1 >= values.len() {
                    return *values.last().unwrap_or(&0.0);
                }
                let w = x - k as f64;
                values[k] * (1.0 - w) + values[k + 1] * w
            }
        }
    }

    /// ∫₀ᵗ f_e(t′) dt′
    pub fn integral(&self, t: f64) -> f64 {
        match self {
            DriveProfile::Zero => 0.0,
            DriveProfile::Constant { value } => value * t,
            DriveProfile::Cosine {
                amplitude,
                frequency,
                phase,
            } => {
                if *frequency == 0.0 {
                    amplitude * phase.cos() * t
                } else {
                    amplitude * ((frequency * t + phase).sin() - phase.sin()) / frequency
                }
            }
            DriveProfile::Sampled { dt, values } => {
                // Exact integral of the piecewise-linear interpolant.
                let mut acc = 0.0;
                let mut k = 0;
                while k + 1 < values.len() && (k + 1) as f64 * dt <= t {
                    acc += 0.5 * (values[k] + values[k + 1]) * dt;
                    k += 1;
                }
                let t0 = k as f64 * dt;
                if t > t0 {
                    acc +=
                        0.5 * (values.get(k).copied().unwrap_or(0.0) + self.envelope(t)) * (t - t0);
                }
                acc
            }
        }
    }

    /// |α(t)|²
    pub fn alpha_sq(&self, t: f64) -> f64 {
        self.integral(t).powi(2)
    }
}

/// Mean photon number of the input mode displaced by the envelope from vacuum.
pub fn coherent_photon_number(profile: &DriveProfile, t: f64) -> f64 {
    profile.alpha_sq(t)
}

/// Bloch derivative for every spin:
/// ṡ^x = 2Φ s^y, ṡ^y = −2Φ s^x − Δ_eff s^z, ṡ^z = Δ_eff s^y, Φ = γ|α|² + η.
pub fn bloch_rhs(
    state: &SpinState,
    gammas: &[f64],
    alpha_sq: f64,
    noise: &[f64],
    delta_eff: f64,
) -> Result<SpinState> {
    let n = state.len();
    if gammas.len() != n || noise.len() != n {
        return invalid(format!(
            "{n} spins but {} couplings and {} noise samples",
            gammas.len(),
            noise.len()
        ));
    }
    let mut out = SpinState {
        spins: vec![[0.0; 3]; n],
    };
    rhs_into(
        &state.spins,
        gammas,
        alpha_sq,
        noise,
        delta_eff,
        &mut out.spins,
    );
    Ok(out)
}

fn rhs_into(
    s: &[[f64; 3]],
    gammas: &[f64],
    alpha_sq: f64,
    noise: &[f64],
    delta_eff: f64,
    out: &mut [[f64; 3]],
) {
    for j in 0..s.len() {
        let phi = 2.0 * (gammas[j] * alpha_sq + noise[j]);
        let [x, y, z] = s[j];
        out[j] = [phi * y, -phi * x - delta_eff * z, delta_eff * y];
    }
}

/// How Δ_eff is set during integration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Tunneling {
    Fixed {
        value: f64,
    },
    /// Δ_eff = κ Σ_k s^x_k, refreshed at every RK4 stage.
    MeanField {
        kappa: f64,
    },
}

impl Tunneling {
    fn value(&self, s: &[[f64; 3]]) -> f64 {
        match *self {
            Tunneling::Fixed { value } => value,
            Tunneling::MeanField { kappa } => kappa * s.iter().map(|v| v[0]).sum::<f64>(),
        }
    }
}

/// κ = (g^a)²/(2δΩ) of the first qubit.
pub fn mean_field_kappa(params: &ModelParams) -> Result<f64> {
    Ok(0.5 * dispersive_shift(params, 0)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlochRun {
    pub dt: f64,
    pub n_steps: usize,
    pub stride: usize,
    /// η_j white-noise intensity D (per-step variance 2D/dt).
    pub noise_d: f64,
    pub seed: u64,
    pub tunneling: Tunneling,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlochTrace {
    pub times: Vec<f64>,
    pub sz: Vec<f64>,
    pub delta_eff: Vec<f64>,
    pub final_state: SpinState,
    pub max_norm_error: f64,
}

/// RK4 integration with each spin's η held constant over a step.
pub fn integrate_bloch(
    initial: &SpinState,
    gammas: &[f64],
    drive: &DriveProfile,
    run: &BlochRun,
) -> Result<BlochTrace> {
    let n = initial.len();
    if gammas.len() != n {
        return invalid("one coupling per spin required");
    }
    if !(run.dt > 0.0) || run.stride == 0 {
        return invalid("Bloch run needs dt > 0 and stride ≥ 1");
    }
    let mut noises: Vec<WhiteNoise> = (0..n)
        .map(|j| {
            WhiteNoise::new(
                derive_seed(run.seed, SPIN_NOISE_STREAM, j as u64),
                run.noise_d,
                run.dt,
            )
        })
        .collect();
    let mut s = initial.spins.clone();
    let mut eta = vec![0.0; n];
    let mut k = [
        vec![[0.0; 3]; n],
        vec![[0.0; 3]; n],
        vec![[0.0; 3]; n],
        vec![[0.0; 3]; n],
    ];
    let mut tmp = vec![[0.0; 3]; n];
    let mut times = vec![0.0];
    let mut sz = vec![initial.total_sz()];
    let mut delta_eff = vec![run.tunneling.value(&s)];
    let mut max_norm_error = initial.max_norm_error();
    let dt = run.dt;
    for step in 0..run.n_steps {
        let t = step as f64 * dt;
        for (e, w) in eta.iter_mut().zip(noises.iter_mut()) {
            *e = if run.noise_d > 0.0 { w.sample() } else { 0.0 };
        }
        let a = [
            drive.alpha_sq(t),
            drive.alpha_sq(t + 0.5 * dt),
            drive.alpha_sq(t + dt),
        ];
        rhs_into(&s, gammas, a[0], &eta, run.tunneling.value(&s), &mut k[0]);
        for stage in 1..4 {
            let h = if stage == 3 { dt } else { 0.5 * dt };
            for j in 0..n {
                for c in 0..3 {
                    tmp[j][c] = s[j][c] + h * k[stage - 1][j][c];
                }
            }
            let alpha = if stage == 3 { a[2] } else { a[1] };
            let d = run.tunneling.value(&tmp);
            let (_, rest) = k.split_at_mut(stage);
            rhs_into(&tmp, gammas, alpha, &eta, d, &mut rest[0]);
        }
        for j in 0..n {
            for c in 0..3 {
                s[j][c] +=
                    dt / 6.0 * (k[0][j][c] + 2.0 * k[1][j][c] + 2.0 * k[2][j][c] + k[3][j][c]);
            }
        }
        if (step + 1) % run.stride == 0 {
            let state = SpinState { spins: s.clone() };
            max_norm_error = max_norm_error.max(state.max_norm_error());
            times.push((step + 1) as f64 * dt);
            sz.push(state.total_sz());
            delta_eff.push(run.tunneling.value(&s));
        }
    }
    Ok(BlochTrace {
        times,
        sz,
        delta_eff,
        final_state: SpinState { spins: s },
        max_norm_error,
    })
}

/// ∫₀ᵗ∫₀^{t′} y(t″) dt″ dt′ of a uniformly sampled series (trapezoid rule),
/// returned at every sample.
pub fn double_integral(y: &[f64], dt: f64) -> Vec<f64> {
    let mut inner = 0.0;
    let mut outer = 0.0;
    let mut out = Vec::with_capacity(y.len());
    out.push(0.0);
    for k in 1..y.len() {
        let prev_inner = inner;
        inner += 0.5 * (y[k - 1] + y[k]) * dt;
        outer += 0.5 * (prev_inner + inner) * dt;
        out.push(outer);
    }
    out
}

/// First-order s^z of a spin starting at s^x = s_x0:
/// s^z ≈ −2Δ_eff s_x0 ∫₀ᵗ∫₀^{t′}[γ|α|² + η] dt″ dt′.
/// `eta` holds the noise path on the grid k·dt (may be empty for no noise).
pub fn perturbative_sz(
    gamma: f64,
    drive: &DriveProfile,
    eta: &[f64],
    delta_eff: f64,
    dt: f64,
    n_steps: usize,
    s_x0: f64,
) -> Vec<f64> {
    let rate: Vec<f64> = (0..=n_steps)
        .map(|k| gamma * drive.alpha_sq(k as f64 * dt) + eta.get(k).copied().unwrap_or(0.0))
        .collect();
    double_integral(&rate, dt)
        .into_iter()
        .map(|v| -2.0 * delta_eff * s_x0 * v)
        .collect()
}

/// Collective S^z of N identical spins split into its two bracketed terms:
/// S^z = −2Δ_eff s^x(0) N [coherent + noise], coherent = γ∫∫|α|²,
/// noise = ∫∫ (1/N) Σ_j η_j.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectiveSz {
    pub n_qubits: usize,
    pub times: Vec<f64>,
    pub coherent: Vec<f64>,
    pub noise: Vec<f64>,
    pub total: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectiveSetup {
    pub gamma: f64,
    pub delta_eff: f64,
    pub s_x0: f64,
    pub noise_d: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub drive: DriveProfile,
}

pub fn collective_sz(setup: &CollectiveSetup, n_qubits: usize, seed: u64) -> Result<CollectiveSz> {
    if n_qubits == 0 {
        return invalid("need at least one qubit");
    }
    if !(setup.dt > 0.0) {
        return invalid("dt must be positive");
    }
    let len = setup.n_steps + 1;
    let mut eta_mean = vec![0.0; len];
    if setup.noise_d > 0.0 {
        for j in 0..n_qubits {
            let mut w = WhiteNoise::new(
                derive_seed(seed, SPIN_NOISE_STREAM, j as u64),
                setup.noise_d,
                setup.dt,
            );
            for v in eta_mean.iter_mut() {
                *v += w.sample();
            }
        }
        let inv = 1.0 / n_qubits as f64;
        eta_mean.iter_mut().for_each(|v| *v *= inv);
    }
    let alpha: Vec<f64> = (0..len)
        .map(|k| setup.gamma * setup.drive.alpha_sq(k as f64 * setup.dt))
        .collect();
    let coherent = double_integral(&alpha, setup.dt);
    let noise = double_integral(&eta_mean, setup.dt);
    let pre = -2.0 * setup.delta_eff * setup.s_x0 * n_qubits as f64;
    let total = coherent
        .iter()
        .zip(&noise)
        .map(|(c, n)| pre * (c + n))
        .collect();
    Ok(CollectiveSz {
        n_qubits,
        times: (0..len).map(|k| k as f64 * setup.dt).collect(),
        coherent,
        noise,
        total,
    })
}

/// Final-time noise term over `paths` independent realizations.
pub fn noise_term_samples(
    setup: &CollectiveSetup,
    n_qubits: usize,
    paths: usize,
    seed: u64,
) -> Vec<f64> {
    map_indexed(paths, |p| {
        let c = collective_sz(
            setup,
            n_qubits,
            derive_seed(seed, n_qubits as u64, p as u64),
        )
        .expect("validated setup");
        *c.noise.last().unwrap_or(&0.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(dt: f64, n_steps: usize, noise_d: f64, tunneling: Tunneling) -> BlochRun {
        BlochRun {
            dt,
            n_steps,
            stride: 1,
            noise_d,
            seed: 1,
            tunneling,
        }
    }

    #[test]
    fn photon_number_of_simple_envelopes() {
        assert_eq!(coherent_photon_number(&DriveProfile::Zero, 3.0), 0.0);
        let c = DriveProfile::Constant { value: 0.2 };
        assert!((coherent_photon_number(&c, 4.0) - 0.64).abs() < 1e-15);
        let cos = DriveProfile::Cosine {
            amplitude: 0.3,
            frequency: 2.0,
            phase: 0.0,
        };
        assert!((cos.integral(1.1) - 0.15 * (2.2f64).sin()).abs() < 1e-15);
    }

    #[test]
    fn sampled_profile_integrates_exactly_when_linear() {
        let dt = 0.1;
        let values: Vec<f64> = (0..50).map(|k| 1.0 + 0.5 * k as f64 * dt).collect();
        let p = DriveProfile::Sampled { dt, values };
        for t in [0.0, 0.05, 1.0, 2.37, 4.9] {
            let exact = t + 0.25 * t * t;
            assert!((p.integral(t) - exact).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn pure_z_rotation_matches_closed_form() {
        let c = 0.3;
        let gamma = 0.5;
        let s0 = SpinState {
            spins: vec![[0.6, 0.8, 0.0]],
        };
        let dt = 0.01;
        let n = 500;
        let mut s = s0.clone();
        for _ in 0..n {
            let f = |x: &SpinState| bloch_rhs(x, &[gamma], c / gamma, &[0.0], 0.0).unwrap();
            let k1 = f(&s);
            let add = |x: &SpinState, k: &SpinState, h: f64| SpinState {
                spins: x
                    .spins
                    .iter()
                    .zip(&k.spins)
                    .map(|(a, b)| [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]])
                    .collect(),
            };
            let k2 = f(&add(&s, &k1, 0.5 * dt));
            let k3 = f(&add(&s, &k2, 0.5 * dt));
            let k4 = f(&add(&s, &k3, dt));
            let mut next = s.clone();
            for c in 0..3 {
                next.spins[0][c] += dt / 6.0
                    * (k1.spins[0][c]
                        + 2.0 * k2.spins[0][c]
                        + 2.0 * k3.spins[0][c]
                        + k4.spins[0][c]);
            }
            s = next;
        }
        let t = n as f64 * dt;
        // s^+ = s^x + i s^y evolves as e^{−2ict} s^+(0).
        let (cr, ci) = ((2.0 * c * t).cos(), -(2.0 * c * t).sin());
        let ex = 0.6 * cr - 0.8 * ci;
        let ey = 0.6 * ci + 0.8 * cr;
        assert!((s.spins[0][0] - ex).abs() < 1e-10);
        assert!((s.spins[0][1] - ey).abs() < 1e-10);
        assert_eq!(s.spins[0][2], 0.0);
    }

    #[test]
    fn pure_x_rotation() {
        let init = SpinState {
            spins: vec![[0.0, 1.0, 0.0]],
        };
        let d = 0.7;
        let tr = integrate_bloch(
            &init,
            &[0.0],
            &DriveProfile::Zero,
            &run(0.01, 300, 0.0, Tunneling::Fixed { value: d }),
        )
        .unwrap();
        let t = 3.0;
        let s = tr.final_state.spins[0];
        assert!((s[1] - (d * t).cos()).abs() < 1e-9);
        assert!((s[2] - (d * t).sin()).abs() < 1e-9);
        assert_eq!(s[0], 0.0);
    }

    #[test]
    fn rhs_rejects_mismatched_lengths() {
        let s = SpinState::x_polarised(3, 1.0);
        assert!(bloch_rhs(&s, &[0.1; 2], 1.0, &[0.0; 3], 0.1).is_err());
    }

    #[test]
    fn norm_is_preserved() {
        let dt = 2.0 * std::f64::consts::PI / 200.0;
        let drive = DriveProfile::Cosine {
            amplitude: 0.05,
            frequency: 0.3,
            phase: 0.0,
        };
        let tr = integrate_bloch(
            &SpinState::x_polarised(8, 1.0),
            &[0.02; 8],
            &drive,
            &BlochRun {
                stride: 200,
                ..run(dt, 200 * 20, 1e-3, Tunneling::MeanField { kappa: 0.01 })
            },
        )
        .unwrap();
        assert!(tr.max_norm_error < 20.0 * 1e-8, "{}", tr.max_norm_error);
    }

    #[test]
    fn mean_field_tracks_total_sx() {
        let tr = integrate_bloch(
            &SpinState::x_polarised(4, -1.0),
            &[0.0; 4],
            &DriveProfile::Zero,
            &run(0.1, 1, 0.0, Tunneling::MeanField { kappa: 0.25 }),
        )
        .unwrap();
        assert_eq!(tr.delta_eff[0], -1.0);
    }

    #[test]
    fn double_integral_of_constant_is_quadratic() {
        let dt = 0.01;
        let v = double_integral(&vec![3.0; 101], dt);
        assert!((v[100] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn perturbative_constant_rate() {
        let c = 0.02;
        let gamma = 0.5;
        let eta = vec![c; 101];
        let sz = perturbative_sz(gamma, &DriveProfile::Zero, &eta, 0.3, 0.05, 100, 1.0);
        let t: f64 = 5.0;
        assert!((sz[100] + 2.0 * 0.3 * c * t * t / 2.0).abs() < 1e-12);
        let zero = perturbative_sz(gamma, &DriveProfile::Zero, &[], 0.3, 0.05, 100, 1.0);
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coherent_term_is_exactly_linear_in_n() {
        let setup = CollectiveSetup {
            gamma: 0.01,
            delta_eff: 0.05,
            s_x0: 1.0,
            noise_d: 0.0,
            dt: 0.05,
            n_steps: 400,
            drive: DriveProfile::Cosine {
                amplitude: 0.1,
                frequency: 0.5,
                phase: 0.0,
            },
        };
        let one = collective_sz(&setup, 1, 0).unwrap();
        let many = collective_sz(&setup, 16, 0).unwrap();
        assert!(many.noise.iter().all(|&v| v == 0.0));
        for (a, b) in one.total.iter().zip(&many.total) {
            assert!((b - 16.0 * a).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }
}
