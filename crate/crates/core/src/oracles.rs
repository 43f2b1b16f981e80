//! Closed-form reference solutions and the checks that compare the numerical
//! engines against them.
//!
//! Qubit convention in this module: |↓⟩ is the ground state (σ^z = +1, digit
//! 0) and |↑⟩ = −|e⟩ with |e⟩ the σ^z = −1 basis vector. With that phase the
//! excitation-exchange coupling +g(σ⁺a + σ⁻a†) produces the `+i` branch of
//! the vacuum Rabi solution.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{
    derive_seed, DetectorHamiltonian, LindbladChannel, LindbladSet, ModelParams, PerQubit,
};
use crate::operator::{
    annihilation, embed, embed_product, number, pauli, HilbertLayout, Matrix, Operator, PauliAxis,
    StateVector, Subsystem, C64, I, ONE, ZERO,
};
use crate::parallel::try_map_indexed;
use crate::qsd::{
    displacement, propagate, InputState, Observable, QsdSystem, RunConfig, Stepper, TimeGrid,
};

/// Photon levels of the oracle state; the single-excitation sector needs two.
pub const RABI_PHOTON_LEVELS: usize = 2;

const ORACLE_STREAM: u64 = 0x4e05;

/// Branch amplitudes cos(√2 g t) and sin(√2 g t) on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RabiSolution {
    pub g_a: f64,
    pub times: Vec<f64>,
    pub photon_branch: Vec<f64>,
    pub bell_branch: Vec<f64>,
}

impl RabiSolution {
    pub fn new(g_a: f64, times: &[f64]) -> Self {
        let w = SQRT_2 * g_a;
        let (bell_branch, photon_branch) = times.iter().map(|&t| (w * t).sin_cos()).unzip();
        Self {
            g_a,
            times: times.to_vec(),
            photon_branch,
            bell_branch,
        }
    }

    /// Largest deviation of cos² + sin² from one.
    pub fn probability_error(&self) -> f64 {
        self.photon_branch
            .iter()
            .zip(&self.bell_branch)
            .map(|(c, s)| (c * c + s * s - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Layout of two qubits and the input mode with `levels` Fock states.
pub fn rabi_layout(levels: usize) -> Result<Arc<HilbertLayout>> {
    Ok(HilbertLayout::new(2, Some(levels), None)?.shared())
}

/// cos(√2gt)|1⟩|↓↓⟩ + i sin(√2gt)|0⟩(|↓↑⟩ + |↑↓⟩)/√2.
pub fn vacuum_rabi_state(g_a: f64, t: f64) -> StateVector {
    vacuum_rabi_state_in(
        &rabi_layout(RABI_PHOTON_LEVELS).expect("static layout"),
        g_a,
        t,
    )
    .expect("layout has two qubits and a photon mode")
}

/// The oracle state embedded in a larger photon truncation.
pub fn vacuum_rabi_state_in(layout: &Arc<HilbertLayout>, g_a: f64, t: f64) -> Result<StateVector> {
    if layout.n_qubits() != 2 || layout.dims().len() != 3 {
        return invalid("vacuum Rabi state needs exactly two qubits and one mode");
    }
    let (s, c) = (SQRT_2 * g_a * t).sin_cos();
    let mut amps = vec![ZERO; layout.dim()];
    amps[layout.index(&[0, 0, 1])] = C64::new(c, 0.0);
    // |↑⟩ = −|e⟩ turns +i sin into −i sin in the computational basis.
    let bell = -I * (s / SQRT_2);
    amps[layout.index(&[0, 1, 0])] = bell;
    amps[layout.index(&[1, 0, 0])] = bell;
    StateVector::new(Arc::clone(layout), amps)
}

/// t_n = (π/2 + πn)/(√2 g).
pub fn bell_readout_times(g_a: f64, n: u32) -> Result<f64> {
    if !(g_a > 0.0 && g_a.is_finite()) {
        return invalid(format!("coupling must be positive, got {g_a}"));
    }
    Ok((PI / 2.0 + PI * n as f64) / (SQRT_2 * g_a))
}

/// Smallest truncation accepted for a displacement by α.
pub fn min_displacement_levels(alpha: C64) -> usize {
    let n = alpha.norm_sqr();
    (n + 6.0 * (n + 1.0).sqrt()).ceil() as usize
}

/// D(α)|ψ⟩ on a truncated mode.
pub fn displacement_apply(alpha: C64, state: &[C64]) -> Result<Vec<C64>> {
    let levels = state.len();
    let need = min_displacement_levels(alpha);
    if levels < need {
        return Err(Error::Precondition(format!(
            "displacement by |α|² = {:.3} needs at least {need} levels, have {levels}",
            alpha.norm_sqr()
        )));
    }
    Ok(displacement(levels, alpha)?.apply(state))
}

/// e^{−|α|²/2} αⁿ/√n! for n < levels.
pub fn coherent_amplitudes(alpha: C64, levels: usize) -> Vec<C64> {
    let mut out = Vec::with_capacity(levels);
    let mut term = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for n in 0..levels {
        out.push(term);
        term *= alpha / ((n + 1) as f64).sqrt();
    }
    out
}

/// Resonant two-qubit detector with V_a replaced by g(σ⁺a + σ⁻a†).
/// Test scaffolding: the oracle holds only under this rotating-wave coupling.
pub fn rotating_wave_hamiltonian(params: &ModelParams) -> Result<Operator> {
    if params.n_qubits != 2 {
        return invalid("rotating-wave scaffold is defined for two qubits");
    }
    let layout = rabi_layout(params.m_a)?;
    let a = annihilation(params.m_a)?;
    let ad = a.adjoint();
    let half = Matrix::identity(params.m_a).scale(C64::new(0.5, 0.0));
    let mut h = embed(
        &(&number(params.m_a)? + &half),
        Subsystem::InputMode,
        &layout,
    )?
    .scale(C64::new(params.omega_a, 0.0));
    // σ⁺ = |e⟩⟨g| maps digit 0 to digit 1.
    let raise = pauli(PauliAxis::Lowering);
    let lower = pauli(PauliAxis::Raising);
    for j in 0..2 {
        let q = Subsystem::Qubit(j);
        let local = &(&pauli(PauliAxis::X) * params.delta.get(j))
            + &(&pauli(PauliAxis::Z) * params.eps.get(j));
        h.add_scaled(C64::new(-0.5, 0.0), &embed(&local, q, &layout)?);
        let g = C64::new(params.g_a.get(j), 0.0);
        h.add_scaled(
            g,
            &embed_product(&[(q, &raise), (Subsystem::InputMode, &a)], &layout)?,
        );
        h.add_scaled(
            g,
            &embed_product(&[(q, &lower), (Subsystem::InputMode, &ad)], &layout)?,
        );
    }
    Ok(h)
}

/// Parameters of the supporting vacuum Rabi example: resonant qubits at
/// Δ = 0, no readout coupling, no dissipation.
pub fn rabi_params(g_a: f64, levels: usize) -> ModelParams {
    ModelParams {
        n_qubits: 2,
        eps: PerQubit::Uniform(1.0),
        delta: PerQubit::Uniform(0.0),
        omega_a: 1.0,
        g_a: PerQubit::Uniform(g_a),
        g_b: PerQubit::Uniform(0.0),
        gamma_z: 0.0,
        gamma_xy: 0.0,
        gamma_b: 0.0,
        m_a: levels,
        ..ModelParams::default()
    }
}

fn photon_number(state: &StateVector) -> Result<f64> {
    let layout = state.layout();
    let n = embed(
        &number(layout.levels(Subsystem::InputMode)?)?,
        Subsystem::InputMode,
        layout,
    )?;
    Ok(crate::operator::expectation(state, &n)?.re)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bound {
    /// value ≤ threshold
    AtMost,
    /// value ≥ threshold
    AtLeast,
}

/// One oracle comparison and its verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
    pub threshold: f64,
    pub passed: bool,
}

impl OracleCheck {
    pub fn new(name: &str, value: f64, bound: Bound, threshold: f64) -> Self {
        let passed = match bound {
            Bound::AtMost => value <= threshold,
            Bound::AtLeast => value >= threshold,
        };
        Self {
            name: name.into(),
            value,
            bound,
            threshold,
            passed,
        }
    }
}

impl fmt::Display for OracleCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.bound {
            Bound::AtMost => "<=",
            Bound::AtLeast => ">=",
        };
        write!(
            f,
            "{} {}: {:.6e} {op} {:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.threshold
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSuite {
    pub g_a: f64,
    /// Photon truncation of the rotating-wave comparison.
    pub rabi_levels: usize,
    /// Samples per Rabi period in the fidelity scan.
    pub rabi_samples: usize,
    pub bell_times: u32,
    /// Duration of the dissipation-free QSD comparison, in periods of ε.
    pub unitary_periods: f64,
    pub steps_per_period: usize,
    pub displacement_alphas: Vec<(f64, f64)>,
    pub displacement_levels: usize,
    pub damping_gamma: f64,
    pub damping_trajectories: usize,
    pub damping_dt: f64,
    pub damping_steps: usize,
    pub damping_samples: usize,
    pub damping_sigmas: f64,
}

impl Default for OracleSuite {
    fn default() -> Self {
        Self {
            g_a: 0.01,
            rabi_levels: 3,
            rabi_samples: 64,
            bell_times: 4,
            unitary_periods: 50.0,
            steps_per_period: 200,
            displacement_alphas: vec![(0.0, 0.0), (1.0, 0.0), (0.6, -1.1), (2.0, 1.0)],
            displacement_levels: 40,
            damping_gamma: 0.05,
            damping_trajectories: 2000,
            damping_dt: 0.01,
            damping_steps: 1000,
            damping_samples: 5,
            damping_sigmas: 3.0,
        }
    }
}

impl OracleSuite {
    pub fn validate(&self) -> Result<()> {
        if !(self.g_a > 0.0) {
            return invalid("oracle g_a must be positive");
        }
        if self.rabi_levels < 2 || self.rabi_samples == 0 || self.steps_per_period == 0 {
            return invalid("oracle grids must be non-empty");
        }
        if self.damping_trajectories < 2 || self.damping_samples == 0 {
            return invalid("amplitude damping needs at least two trajectories and one sample");
        }
        if self.damping_steps % self.damping_samples != 0 {
            return invalid("damping_steps must be a multiple of damping_samples");
        }
        Ok(())
    }

    /// Every comparison, in a fixed order.
    pub fn run(&self, seed: u64) -> Result<Vec<OracleCheck>> {
        self.validate()?;
        let mut out = vec![self.unitary_qsd(seed)?];
        out.extend(self.vacuum_rabi()?);
        out.extend(self.displacement()?);
        out.push(self.amplitude_damping(seed)?);
        Ok(out)
    }

    /// Dissipation-free QSD against the matrix exponential of the detector.
    pub fn unitary_qsd(&self, seed: u64) -> Result<OracleCheck> {
        let params = ModelParams {
            gamma_z: 0.0,
            gamma_xy: 0.0,
            gamma_b: 0.0,
            m_a: 3,
            m_b: 3,
            ..ModelParams::default()
        };
        let cfg = RunConfig {
            params: params.clone(),
            input: InputState::Fock { n: 1 },
            steps_per_period: self.steps_per_period,
            ..RunConfig::default()
        };
        let psi0 = cfg.initial_state()?;
        let sys = QsdSystem::detector(&params)?;
        let n_steps = (self.unitary_periods * self.steps_per_period as f64).round() as usize;
        let grid = TimeGrid {
            dt: cfg.dt(),
            n_steps,
            stride: n_steps.max(1),
        };
        let prop = propagate(
            &sys,
            &psi0,
            &grid,
            &[],
            None,
            Stepper::Rk4Drift,
            derive_seed(seed, ORACLE_STREAM, 0),
        )?;
        let h = DetectorHamiltonian::new(&params)?.static_part;
        let u = h.matrix().scale(-I * (n_steps as f64 * grid.dt)).expm();
        let exact = StateVector::new(Arc::clone(psi0.layout()), u.apply(psi0.amplitudes()))?;
        let loss = 1.0 - prop.final_state.fidelity(&exact);
        Ok(OracleCheck::new(
            "qsd_unitary_fidelity_loss",
            loss,
            Bound::AtMost,
            1e-6,
        ))
    }

    /// Rotating-wave numerical evolution against the closed form, plus the
    /// Bell-time photon numbers of both.
    pub fn vacuum_rabi(&self) -> Result<Vec<OracleCheck>> {
        let g = self.g_a;
        let params = rabi_params(g, self.rabi_levels);
        let h = rotating_wave_hamiltonian(&params)?;
        let layout = Arc::clone(h.layout());
        let psi0 = vacuum_rabi_state_in(&layout, g, 0.0)?;
        let period = 2.0 * PI / (SQRT_2 * g);
        let evolve = |t: f64| -> Result<StateVector> {
            let u = h.matrix().scale(-I * t).expm();
            StateVector::new(Arc::clone(&layout), u.apply(psi0.amplitudes()))
        };
        let mut worst_loss: f64 = 0.0;
        for k in 1..=self.rabi_samples {
            let t = period * k as f64 / self.rabi_samples as f64;
            let exact = vacuum_rabi_state_in(&layout, g, t)?;
            worst_loss = worst_loss.max(1.0 - evolve(t)?.fidelity(&exact));
        }
        let (mut oracle_n, mut numeric_n): (f64, f64) = (0.0, 0.0);
        for n in 0..self.bell_times {
            let t = bell_readout_times(g, n)?;
            oracle_n = oracle_n.max(photon_number(&vacuum_rabi_state(g, t))?);
            numeric_n = numeric_n.max(photon_number(&evolve(t)?)?);
        }
        Ok(vec![
            OracleCheck::new("vacuum_rabi_fidelity_loss", worst_loss, Bound::AtMost, 1e-6),
            OracleCheck::new("bell_time_photons_oracle", oracle_n, Bound::AtMost, 1e-12),
            OracleCheck::new("bell_time_photons_numeric", numeric_n, Bound::AtMost, 1e-3),
        ])
    }

    /// Coherent-state overlap of D(α)|0⟩ and the D(α)D(−α) round trip.
    pub fn displacement(&self) -> Result<Vec<OracleCheck>> {
        let m = self.displacement_levels;
        let (mut overlap_loss, mut round_loss): (f64, f64) = (0.0, 0.0);
        for &(re, im) in &self.displacement_alphas {
            let alpha = C64::new(re, im);
            let mut vac = vec![ZERO; m];
            vac[0] = ONE;
            let v = displacement_apply(alpha, &vac)?;
            let exact = coherent_amplitudes(alpha, m);
            overlap_loss = overlap_loss.max(1.0 - crate::operator::inner(&exact, &v).norm_sqr());
            let probe: Vec<C64> = (0..m)
                .map(|n| {
                    if n < 4 {
                        C64::new(0.5, 0.1 * n as f64)
                    } else {
                        ZERO
                    }
                })
                .collect();
            let norm = crate::operator::norm(&probe);
            let probe: Vec<C64> = probe.iter().map(|z| z / norm).collect();
            let back = displacement_apply(alpha, &displacement_apply(-alpha, &probe)?)?;
            round_loss = round_loss.max(1.0 - crate::operator::inner(&probe, &back).norm_sqr());
        }
        Ok(vec![
            OracleCheck::new("coherent_overlap_loss", overlap_loss, Bound::AtMost, 1e-8),
            OracleCheck::new(
                "displacement_round_trip_loss",
                round_loss,
                Bound::AtMost,
                1e-10,
            ),
        ])
    }

    /// Excited-state population of a single decaying qubit against
    /// exp(−2Γt), as the largest standard score over the sample times.
    pub fn amplitude_damping(&self, seed: u64) -> Result<OracleCheck> {
        let gamma = self.damping_gamma;
        let layout = HilbertLayout::qubits(1)?.shared();
        let lower = pauli(PauliAxis::Raising).scale(C64::new((2.0 * gamma).sqrt(), 0.0));
        let set = LindbladSet {
            channels: vec![LindbladChannel {
                label: "relax".into(),
                operator: Operator::new(Arc::clone(&layout), lower)?,
                rate: gamma,
            }],
        };
        let h = Operator::new(
            Arc::clone(&layout),
            pauli(PauliAxis::Z).scale(C64::new(-0.5, 0.0)),
        )?;
        let sys = QsdSystem::new(&h, &set)?;
        let excited = StateVector::new(Arc::clone(&layout), vec![ZERO, ONE])?;
        let pop = Observable::new(
            "p_e",
            &Operator::new(Arc::clone(&layout), Matrix::diagonal(&[ZERO, ONE]))?,
        );
        let grid = TimeGrid {
            dt: self.damping_dt,
            n_steps: self.damping_steps,
            stride: self.damping_steps / self.damping_samples,
        };
        let n = self.damping_trajectories;
        let runs = try_map_indexed(n, |i| {
            let seed = derive_seed(seed, ORACLE_STREAM, 1 + i as u64);
            propagate(
                &sys,
                &excited,
                &grid,
                std::slice::from_ref(&pop),
                None,
                Stepper::Rk4Drift,
                seed,
            )
            .map(|mut p| p.values.remove(0))
        })?;
        let mut worst: f64 = 0.0;
        for k in 1..grid.n_samples() {
            let t = k as f64 * grid.sample_dt();
            let mean = runs.iter().map(|r| r[k]).sum::<f64>() / n as f64;
            let var = runs.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            worst = worst.max((mean - (-2.0 * gamma * t).exp()).abs() / se);
        }
        Ok(OracleCheck::new(
            "amplitude_damping_max_z",
            worst,
            Bound::AtMost,
            self.damping_sigmas,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rabi_state_at_zero_is_one_photon() {
        let s = vacuum_rabi_state(0.01, 0.0);
        let l = s.layout();
        assert_eq!(s.amplitudes()[l.index(&[0, 0, 1])], ONE);
        assert!((s.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn first_bell_time() {
        let t = bell_readout_times(0.01, 0).unwrap();
        assert!((t - 111.0720734).abs() < 1e-6);
        let t1 = bell_readout_times(0.01, 1).unwrap();
        assert!((t1 - t - PI / (SQRT_2 * 0.01)).abs() < 1e-9);
        assert!(bell_readout_times(0.0, 0).is_err());
    }

    #[test]
    fn bell_state_at_bell_time() {
        let g = 0.02;
        let s = vacuum_rabi_state(g, bell_readout_times(g, 0).unwrap());
        let l = s.layout();
        let a = s.amplitudes();
        assert!(a[l.index(&[0, 0, 1])].norm() < 1e-15);
        assert!((a[l.index(&[0, 1, 0])].norm() - SQRT_2 / 2.0).abs() < 1e-15);
        assert_eq!(a[l.index(&[0, 1, 0])], a[l.index(&[1, 0, 0])]);
    }

    #[test]
    fn rabi_solution_probabilities() {
        let times: Vec<f64> = (0..1000).map(|k| k as f64 * 0.37).collect();
        assert!(RabiSolution::new(0.013, &times).probability_error() < 1e-15);
    }

    #[test]
    fn displacement_precondition() {
        let alpha = C64::new(2.0, 0.0);
        let need = min_displacement_levels(alpha);
        assert_eq!(need, 18);
        assert!(matches!(
            displacement_apply(alpha, &vec![ZERO; need - 1]),
            Err(Error::Precondition(_))
        ));
        let mut vac = vec![ZERO; need];
        vac[0] = ONE;
        assert!(displacement_apply(alpha, &vac).is_ok());
    }

    #[test]
    fn zero_displacement_is_identity() {
        let psi: Vec<C64> = (0..8).map(|n| C64::new(n as f64, -1.0)).collect();
        let out = displacement_apply(ZERO, &psi).unwrap();
        for (a, b) in psi.iter().zip(&out) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn coherent_photon_number() {
        let alpha = C64::new(1.2, 0.7);
        let mut vac = vec![ZERO; 40];
        vac[0] = ONE;
        let v = displacement_apply(alpha, &vac).unwrap();
        let n: f64 = v
            .iter()
            .enumerate()
            .map(|(k, z)| k as f64 * z.norm_sqr())
            .sum();
        assert!((n - alpha.norm_sqr()).abs() < 1e-10);
    }

    #[test]
    fn displacement_at_minimum_truncation() {
        for alpha in [C64::new(0.5, 0.0), C64::new(1.0, 1.0), C64::new(3.0, 0.0)] {
            let m = min_displacement_levels(alpha);
            let mut vac = vec![ZERO; m];
            vac[0] = ONE;
            let v = displacement_apply(alpha, &vac).unwrap();
            let f = crate::operator::inner(&coherent_amplitudes(alpha, m), &v).norm_sqr();
            assert!(1.0 - f < 1e-6, "{alpha}: {}", 1.0 - f);
        }
    }

    #[test]
    fn default_suite_passes_fast_checks() {
        let suite = OracleSuite::default();
        let checks: Vec<OracleCheck> = suite
            .vacuum_rabi()
            .unwrap()
            .into_iter()
            .chain(suite.displacement().unwrap())
            .collect();
        for c in &checks {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn rotating_wave_requires_two_qubits() {
        let p = ModelParams {
            n_qubits: 3,
            ..rabi_params(0.01, 3)
        };
        assert!(rotating_wave_hamiltonian(&p).is_err());
    }

    #[test]
    fn check_verdicts() {
        assert!(OracleCheck::new("a", 1.0, Bound::AtMost, 1.0).passed);
        assert!(!OracleCheck::new("a", 0.5, Bound::AtLeast, 0.9).passed);
        assert!(!OracleCheck::new("a", f64::NAN, Bound::AtMost, 1.0).passed);
    }
}
